mod common;

use std::collections::BTreeMap;

use common::{feats, micro, seq};
use proptest::prelude::*;
use tslab_core::decoder::{beam_search, reduce_blank, BeamConfig, BlankReduction, FusionMode, Hypothesis};
use tslab_core::ilm::{density_ratio_ilm, zero_encoder_ilm, DensityRatioConfig, IlmEstimate};
use tslab_core::lm::{train_ngram, NGramLm, SequenceScorer};
use tslab_core::model::{all_sequences, Label, LabelSequence, PredictorKind, TransducerParams};
use tslab_core::nn::Matrix;

/// Log-score of every label sequence by enumerating all `(V+1)^T` alignments
/// with the (optionally reduced) per-frame distributions.
fn alignment_oracle(model: &TransducerParams, x: &Matrix, reduction: BlankReduction) -> BTreeMap<LabelSequence, f64> {
    let v = model.vocab().len();
    let t_len = x.rows();
    let enc = model.encode(x).unwrap();
    let mut sums: BTreeMap<LabelSequence, f64> = BTreeMap::new();
    let total = (v + 1).pow(t_len as u32);
    for code in 0..total {
        let mut c = code;
        let mut labels = Vec::new();
        let mut p = 1.0;
        for t in 0..t_len {
            let sym = c % (v + 1);
            c /= v + 1;
            let ctx = model.predict_context(&labels).unwrap();
            let dist = reduce_blank(&model.step_posterior(enc.row(t), &ctx).unwrap(), reduction).unwrap();
            p *= dist[sym];
            if sym > 0 {
                labels.push(Label::new(sym as u32 - 1));
            }
        }
        *sums.entry(labels).or_insert(0.0) += p;
    }
    sums.into_iter().map(|(k, p)| (k, p.ln())).collect()
}

fn label_chain(scorer: &dyn SequenceScorer, a: &[Label]) -> f64 {
    (0..a.len()).map(|s| scorer.next_log_probs(&a[..s]).labels[a[s].index()]).sum()
}

fn fused_oracle(
    model: &TransducerParams,
    x: &Matrix,
    elm: &dyn SequenceScorer,
    ilm: Option<&IlmEstimate>,
    config: &BeamConfig,
) -> Vec<(LabelSequence, f64)> {
    let tr = alignment_oracle(model, x, config.blank_reduction);
    let mut out: Vec<(LabelSequence, f64)> = all_sequences(model.vocab().len(), x.rows())
        .into_iter()
        .map(|a| {
            let mut s = tr[&a];
            if config.fusion_mode != FusionMode::None {
                s += config.lambda1 * elm.score(&a).unwrap();
            }
            if let Some(i) = ilm.filter(|_| config.lambda2 > 0.0) {
                s -= config.lambda2 * label_chain(i, &a);
            }
            (a, s)
        })
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.len().cmp(&b.0.len())).then(a.0.cmp(&b.0)));
    out
}

fn elm_for(v: usize) -> NGramLm {
    let corpus = vec![seq(&[0, 1]), seq(&[1, 1, 0]), seq(&[0]), seq(&[1, 0, 1, 1])];
    let corpus: Vec<_> = corpus.into_iter().map(|s| s.into_iter().filter(|l| l.index() < v).collect()).collect();
    train_ngram(&corpus, v, 3, 0.2).unwrap()
}

fn mode_config(mode: FusionMode, beam: usize) -> BeamConfig {
    let mut c = BeamConfig::plain(beam);
    c.fusion_mode = mode;
    c.n_best_out = 1000;
    if mode != FusionMode::None {
        c.lambda1 = 0.7;
    }
    if mode.uses_ilm() {
        c.lambda2 = 0.4;
    }
    if mode == FusionMode::SfReduceBlank {
        c.blank_reduction = BlankReduction::Linear(0.3);
    }
    c
}

#[test]
fn exhaustive_beam_matches_fused_argmax_in_every_mode() {
    let mut cases = 0;
    for kind in [PredictorKind::ContextOne, PredictorKind::Elman, PredictorKind::Lstm] {
        for v in 1..=2usize {
            for t_len in 1..=4usize {
                let seed = 10 * v as u64 + t_len as u64;
                let model = micro(kind, v, seed);
                let x = feats(t_len, seed + 3);
                let elm = elm_for(v);
                let zero = zero_encoder_ilm(&model, true);
                let dr = density_ratio_ilm(&[seq(&[0]), seq(&[0, 0])], v, &DensityRatioConfig::default()).unwrap();
                let beam = (v + 1).pow(t_len as u32);
                for mode in FusionMode::ALL {
                    let mut configs = vec![mode_config(mode, beam)];
                    if mode == FusionMode::SfReduceBlank {
                        let mut c = mode_config(mode, beam);
                        c.blank_reduction = BlankReduction::Exponential(2.5);
                        configs.push(c);
                    }
                    let ilm = match mode {
                        FusionMode::SfIlm => Some(&zero),
                        FusionMode::SfDr => Some(&dr),
                        _ => None,
                    };
                    for config in configs {
                        let hyps = beam_search(&model, &x, Some(&elm), ilm, &config).unwrap();
                        let oracle = fused_oracle(&model, &x, &elm, ilm, &config);
                        assert_eq!(hyps.len(), oracle.len(), "every sequence survives an exhaustive beam");
                        assert_eq!(hyps[0].labels, oracle[0].0, "{} {kind:?} V={v} T={t_len}", mode.name());
                        for (h, (a, s)) in hyps.iter().zip(&oracle) {
                            assert_eq!(&h.labels, a);
                            assert!((h.combined - s).abs() < 1e-9, "{} vs {s}", h.combined);
                            assert!((h.recombined(&config) - h.combined).abs() <= 1e-12);
                        }
                        cases += 1;
                    }
                }
            }
        }
    }
    assert_eq!(cases, 3 * 2 * 4 * 6);
}

fn same_output(a: &[Hypothesis], b: &[Hypothesis]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.labels == y.labels
                && x.transducer.to_bits() == y.transducer.to_bits()
                && x.combined.to_bits() == y.combined.to_bits()
        })
}

#[test]
fn zero_scales_reduce_to_simpler_rules_bitwise() {
    for seed in 0..6u64 {
        let model = micro(PredictorKind::Elman, 3, seed);
        let x = feats(5, seed);
        let elm = elm_for(3);
        let ilm = zero_encoder_ilm(&model, true);
        for beam in [1, 2, 4] {
            let mut none = BeamConfig::plain(beam);
            none.n_best_out = 4;
            let mut sf = none;
            sf.fusion_mode = FusionMode::Sf;
            let plain = beam_search(&model, &x, None, None, &none).unwrap();
            let sf0 = beam_search(&model, &x, Some(&elm), None, &sf).unwrap();
            assert!(same_output(&plain, &sf0));

            sf.lambda1 = 0.5;
            let mut sf_ilm = sf;
            sf_ilm.fusion_mode = FusionMode::SfIlm;
            let fused = beam_search(&model, &x, Some(&elm), None, &sf).unwrap();
            let ilm0 = beam_search(&model, &x, Some(&elm), Some(&ilm), &sf_ilm).unwrap();
            assert!(same_output(&fused, &ilm0));

            let mut rb = sf;
            rb.fusion_mode = FusionMode::SfReduceBlank;
            for identity in [BlankReduction::Off, BlankReduction::Linear(1.0), BlankReduction::Exponential(1.0)] {
                rb.blank_reduction = identity;
                let out = beam_search(&model, &x, Some(&elm), None, &rb).unwrap();
                assert_eq!(
                    out.iter().map(|h| &h.labels).collect::<Vec<_>>(),
                    fused.iter().map(|h| &h.labels).collect::<Vec<_>>()
                );
            }
        }
    }
}

#[test]
fn configuration_errors() {
    let model = micro(PredictorKind::ContextOne, 2, 1);
    let x = feats(3, 1);
    let elm = elm_for(2);
    let zero = zero_encoder_ilm(&model, true);
    let run =
        |c: BeamConfig, e: Option<&dyn SequenceScorer>, i: Option<&IlmEstimate>| beam_search(&model, &x, e, i, &c);
    let base = BeamConfig::plain(2);
    assert!(run(BeamConfig { beam_size: 0, ..base }, None, None).is_err());
    assert!(run(BeamConfig { n_best_out: 0, ..base }, None, None).is_err());
    assert!(run(BeamConfig { lambda1: 0.3, ..base }, Some(&elm), None).is_err());
    let sf = BeamConfig { fusion_mode: FusionMode::Sf, lambda1: 0.3, ..base };
    assert!(run(sf, None, None).is_err());
    assert!(run(BeamConfig { lambda2: 0.3, ..sf }, Some(&elm), Some(&zero)).is_err());
    assert!(run(BeamConfig { blank_reduction: BlankReduction::Linear(0.5), ..sf }, Some(&elm), None).is_err());
    let ilm_mode = BeamConfig { fusion_mode: FusionMode::SfIlm, lambda2: 0.2, ..sf };
    assert!(run(ilm_mode, Some(&elm), None).is_err());
    assert!(run(ilm_mode, Some(&elm), Some(&zero)).is_ok());
    let dr_mode = BeamConfig { fusion_mode: FusionMode::SfDr, ..ilm_mode };
    assert!(run(dr_mode, Some(&elm), Some(&zero)).is_err());
    let rb = BeamConfig { fusion_mode: FusionMode::SfReduceBlank, ..sf };
    assert!(run(BeamConfig { blank_reduction: BlankReduction::Linear(1.5), ..rb }, Some(&elm), None).is_err());
    assert!(run(BeamConfig { blank_reduction: BlankReduction::Exponential(0.5), ..rb }, Some(&elm), None).is_err());
    assert!(beam_search(&model, &Matrix::zeros(0, 2), None, None, &base).is_err());
    let wrong_vocab = elm_for(1);
    assert!(run(sf, Some(&wrong_vocab), None).is_err());
}

#[test]
fn reduce_blank_hand_example() {
    let out = reduce_blank(&[0.5, 0.3, 0.2], BlankReduction::Linear(0.5)).unwrap();
    let expected = [0.25 / 0.75, 0.3 / 0.75, 0.2 / 0.75];
    for (a, b) in out.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!((out[0] - 1.0 / 3.0).abs() < 1e-12 && (out[1] - 0.4).abs() < 1e-12);
    let zero = reduce_blank(&[0.5, 0.3, 0.2], BlankReduction::Linear(0.0)).unwrap();
    assert_eq!(zero[0], 0.0);
    assert!((zero[1] - 0.6).abs() < 1e-15 && (zero[2] - 0.4).abs() < 1e-15);
    assert!(reduce_blank(&[0.5, 0.3], BlankReduction::Off).is_err());
    assert!(reduce_blank(&[1.0, 0.0], BlankReduction::Linear(0.0)).is_err());
}

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, 2..7).prop_map(|w| {
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    })
}

fn reduction() -> impl Strategy<Value = BlankReduction> {
    prop_oneof![(0.0f64..=1.0).prop_map(BlankReduction::Linear), (1.0f64..8.0).prop_map(BlankReduction::Exponential)]
}

proptest! {
    #[test]
    fn reduce_blank_normalizes_and_keeps_label_order(p in distribution(), r in reduction()) {
        let out = reduce_blank(&p, r).unwrap();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for i in 1..p.len() {
            for j in 1..p.len() {
                if p[i] < p[j] {
                    prop_assert!(out[i] <= out[j]);
                }
            }
        }
        prop_assert!(out[0] <= p[0] + 1e-15);
    }

    #[test]
    fn smaller_rho_suppresses_blank_strictly(p in distribution(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let small = reduce_blank(&p, BlankReduction::Linear(lo)).unwrap();
        let large = reduce_blank(&p, BlankReduction::Linear(hi)).unwrap();
        prop_assert!(small[0] < large[0]);
    }

    #[test]
    fn identity_parameters_return_input(p in distribution()) {
        prop_assert_eq!(reduce_blank(&p, BlankReduction::Linear(1.0)).unwrap().len(), p.len());
        for r in [BlankReduction::Linear(1.0), BlankReduction::Exponential(1.0)] {
            let out = reduce_blank(&p, r).unwrap();
            for (x, y) in out.iter().zip(&p) {
                prop_assert!((x - y).abs() <= 1e-15);
            }
        }
    }
}
