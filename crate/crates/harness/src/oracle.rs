//! Brute-force and finite-difference checks on micro models.
//!
//! Each check returns a [`CheckReport`]; `oracle-check` prints them and the
//! acceptance target asserts them.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tslab_core::decoder::{
    beam_search, edit_distance, reduce_blank, BeamConfig, BlankReduction, FusionMode, Hypothesis,
};
use tslab_core::ilm::{density_ratio_ilm, zero_encoder_ilm, DensityRatioConfig, IlmEstimate};
use tslab_core::lattice::{brute_force_seq_log_prob, ce_loss_and_grad, posterior_table, seq_log_prob};
use tslab_core::lm::{train_ngram, NGramLm, SequenceScorer, UniformLm};
use tslab_core::model::{
    all_sequences, Label, LabelSequence, ModelConfig, PredictorKind, TransducerParams, Vocabulary,
};
use tslab_core::nn::Matrix;
use tslab_core::numerics::check_gradient;
use tslab_core::seqtrain::{
    bayes_optimal_sequence, exact_log_denominator, gradient_descent, lf_mmi_log_denominator, lf_mmi_loss,
    mbr_loss_exact, mbr_loss_nbest, mmi_loss_exact, mmi_loss_nbest, mmi_optimum_target, total_variation,
    EmpiricalDistribution, EmpiricalUtterance, NBestEntry, NBestList, SeqScales, SequenceModel, TableModel,
    LF_MMI_DEFAULT_TOP_K,
};

use crate::error::Result;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} {verdict} {}: {} [{:.2}s]", self.id, self.name, self.detail, self.seconds)
    }
}

/// Runs `body`, which returns (passed, detail); fails on error or when the
/// wall-clock budget is exceeded.
fn timed<F>(id: usize, name: &'static str, budget_s: f64, body: F) -> CheckReport
where
    F: FnOnce() -> Result<(bool, String)>,
{
    let start = Instant::now();
    let out = body();
    let seconds = start.elapsed().as_secs_f64();
    let (passed, mut detail) = match out {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_budget = seconds < budget_s;
    if !in_budget {
        detail.push_str(&format!("; over the {budget_s} s budget"));
    }
    CheckReport { id, name, passed: passed && in_budget, detail, seconds }
}

pub fn micro_model(kind: PredictorKind, vocab: usize, seed: u64) -> Result<TransducerParams> {
    let mut c = ModelConfig::new(Vocabulary::with_size(vocab)?, 2);
    c.predictor = kind;
    c.encoder_hidden = 3;
    c.encoder_dim = 3;
    c.embed_dim = 2;
    c.predictor_dim = 3;
    c.joint_hidden = 4;
    Ok(TransducerParams::new(c, seed, 0.8)?)
}

pub fn micro_features(t: usize, seed: u64) -> Matrix {
    let data = (0..2 * t).map(|i| ((i as f64 + 1.0) * (seed as f64 + 0.37)).sin()).collect();
    Matrix::from_vec(t, 2, data).expect("2·t values")
}

fn seq(ids: &[u32]) -> LabelSequence {
    ids.iter().map(|i| Label::new(*i)).collect()
}

const KINDS: [PredictorKind; 3] = [PredictorKind::ContextOne, PredictorKind::Elman, PredictorKind::Lstm];

fn edit_risk(h: &[Label], a: &[Label]) -> f64 {
    edit_distance(h, a) as f64
}

fn with_params(model: &TransducerParams, w: &[f64]) -> TransducerParams {
    let mut m = model.clone();
    m.as_mut_slice().copy_from_slice(w);
    m
}

pub fn posterior_normalization() -> CheckReport {
    timed(1, "posterior normalization", 5.0, || {
        let mut worst = 0.0f64;
        for seed in 0..20u64 {
            let m = micro_model(KINDS[seed as usize % 3], 2, seed)?;
            let table = posterior_table(&m, &micro_features(4, seed), 4)?;
            let total: f64 = table.values().sum();
            worst = worst.max((total - 1.0).abs());
        }
        Ok((worst < 1e-9, format!("20 models, max |Σ P(a|X) − 1| = {worst:.2e}")))
    })
}

pub fn alignment_sum_oracle() -> CheckReport {
    timed(2, "alignment-sum oracle", 10.0, || {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut worst = 0.0f64;
        for case in 0..100u64 {
            let v = rng.random_range(1..=3usize);
            let t = rng.random_range(1..=5usize);
            let s = rng.random_range(0..=t);
            let target: LabelSequence = (0..s).map(|_| Label::new(rng.random_range(0..v as u32))).collect();
            let m = micro_model(KINDS[rng.random_range(0..3)], v, case)?;
            let x = micro_features(t, case + 100);
            let fast = seq_log_prob(&m, &x, &target)?.value();
            let slow = brute_force_seq_log_prob(&m, &x, &target)?.value();
            worst = worst.max((fast - slow).abs());
        }
        Ok((worst < 1e-10, format!("100 cases, max log-domain difference = {worst:.2e}")))
    })
}

pub fn gradient_suite() -> CheckReport {
    const EPS: f64 = 1e-5;
    timed(3, "gradient suite", 60.0, || {
        let mut rows = Vec::new();
        let mut max_params = 0;
        let mut record = |name: &str, m: &TransducerParams, err: f64| {
            max_params = max_params.max(m.param_count());
            rows.push((name.to_string(), err));
        };
        let lm = train_ngram(&[seq(&[0, 1]), seq(&[1]), seq(&[0, 0, 1]), seq(&[])], 2, 2, 0.5)?;

        let m = micro_model(PredictorKind::Lstm, 2, 1)?;
        let (x, a) = (micro_features(4, 1), seq(&[1, 0]));
        let g = ce_loss_and_grad(&m, &[(&x, &a)])?.grad;
        let r = check_gradient(
            |w: &[f64]| ce_loss_and_grad(&with_params(&m, w), &[(&x, &a)]).map_or(f64::NAN, |r| r.loss),
            m.as_slice(),
            g,
            EPS,
        )?;
        record("ce", &m, r.max_relative_error);

        for kind in [PredictorKind::ContextOne, PredictorKind::Elman] {
            let m = micro_model(kind, 2, 2)?;
            let s = SeqScales::new(0.7, 0.4)?;
            let emp = EmpiricalDistribution::new(vec![
                EmpiricalUtterance {
                    input: micro_features(3, 1),
                    weight: 0.25,
                    targets: vec![(seq(&[0, 1]), 0.6), (seq(&[1]), 0.4)],
                },
                EmpiricalUtterance { input: micro_features(4, 2), weight: 0.75, targets: vec![(seq(&[1, 1, 0]), 1.0)] },
            ])?;
            let g = mmi_loss_exact(&m, &lm, s, &emp, 4)?.grad;
            let r = check_gradient(
                |w: &[f64]| mmi_loss_exact(&with_params(&m, w), &lm, s, &emp, 4).map_or(f64::NAN, |r| r.loss),
                m.as_slice(),
                g,
                EPS,
            )?;
            record(&format!("mmi_exact/{}", kind.name()), &m, r.max_relative_error);
        }

        let m = micro_model(PredictorKind::Elman, 2, 3)?;
        let s = SeqScales::new(1.0, 0.3)?;
        let x = micro_features(4, 3);
        let reference = seq(&[0, 1]);
        let hyps: [&[u32]; 4] = [&[0], &[1, 1], &[0, 0, 1], &[1]];
        let list = NBestList::new(
            "u",
            hyps.iter().map(|h| NBestEntry { labels: seq(h), transducer: 0.0, lm: -1.0 - h.len() as f64 }).collect(),
        )?;
        let g = mmi_loss_nbest(&m, &x, &lm, s, &list, &reference)?.grad;
        let r = check_gradient(
            |w: &[f64]| mmi_loss_nbest(&with_params(&m, w), &x, &lm, s, &list, &reference).map_or(f64::NAN, |r| r.loss),
            m.as_slice(),
            g,
            EPS,
        )?;
        record("mmi_nbest", &m, r.max_relative_error);
        let g = mbr_loss_nbest(&m, &x, &lm, s, &list, &reference, edit_risk)?.grad;
        let r = check_gradient(
            |w: &[f64]| {
                mbr_loss_nbest(&with_params(&m, w), &x, &lm, s, &list, &reference, edit_risk)
                    .map_or(f64::NAN, |r| r.loss)
            },
            m.as_slice(),
            g,
            EPS,
        )?;
        record("mbr_nbest", &m, r.max_relative_error);

        let m = micro_model(PredictorKind::ContextOne, 3, 4)?;
        let lm3 = train_ngram(&[seq(&[0, 1]), seq(&[2]), seq(&[0, 2, 1])], 3, 2, 0.5)?;
        let s = SeqScales::new(0.8, 0.5)?;
        let (x, reference) = (micro_features(5, 4), seq(&[2, 0]));
        let g = lf_mmi_loss(&m, &lm3, s, &x, &reference, None)?.grad;
        let r = check_gradient(
            |w: &[f64]| lf_mmi_loss(&with_params(&m, w), &lm3, s, &x, &reference, None).map_or(f64::NAN, |r| r.loss),
            m.as_slice(),
            g,
            EPS,
        )?;
        record("lf_mmi", &m, r.max_relative_error);

        let worst = rows.iter().map(|r| r.1).fold(0.0, f64::max);
        let listing: Vec<String> = rows.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
        Ok((
            worst < 1e-4 && max_params <= 500,
            format!("max relative error {worst:.2e} ({}); ≤ {max_params} parameters", listing.join(", ")),
        ))
    })
}

fn random_support(rng: &mut ChaCha8Rng, space: &[LabelSequence], size: usize) -> Vec<(LabelSequence, f64)> {
    let mut picked: Vec<LabelSequence> = Vec::new();
    while picked.len() < size {
        let a = &space[rng.random_range(0..space.len())];
        if !picked.contains(a) {
            picked.push(a.clone());
        }
    }
    let w: Vec<f64> = (0..size).map(|_| rng.random_range(0.2..1.0)).collect();
    let z: f64 = w.iter().sum();
    picked.into_iter().zip(w.into_iter().map(|v| v / z)).collect()
}

/// Outcome of training a free table model to the MMI optimum.
#[derive(Clone, Debug)]
pub struct TableRun {
    pub beta: f64,
    pub total_variation: f64,
    /// Distance between the analytic target and the empirical distribution.
    pub target_vs_empirical: f64,
    pub seconds: f64,
}

pub const TABLE_STEPS: usize = 10_000;
const TABLE_STEP_SIZE: f64 = 4.0;

/// Exact MMI on a table model over all sequences of length ≤ 3, |𝒱| = 2.
pub fn table_mmi_run(alpha: f64, beta: f64) -> Result<TableRun> {
    let start = Instant::now();
    let space = all_sequences(2, 3);
    let lm = train_ngram(&[seq(&[0, 1]), seq(&[1]), seq(&[0, 0, 1]), seq(&[])], 2, 2, 0.5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let targets = random_support(&mut rng, &space, 4);
    let s = SeqScales::new(alpha, beta)?;
    let emp =
        EmpiricalDistribution::new(vec![EmpiricalUtterance { input: 0usize, weight: 1.0, targets: targets.clone() }])?;
    let mut model = TableModel::new(2, 3, 1)?;
    let mut params = model.params().to_vec();
    gradient_descent(&mut params, TABLE_STEPS, TABLE_STEP_SIZE, |w| {
        model.params_mut().copy_from_slice(w);
        mmi_loss_exact(&model, &lm, s, &emp, 3)
    })?;
    model.params_mut().copy_from_slice(&params);
    let target = mmi_optimum_target(&targets, &lm, s)?;
    let pr: BTreeMap<_, _> = targets.into_iter().collect();
    Ok(TableRun {
        beta,
        total_variation: total_variation(&model.distribution(0)?, &target),
        target_vs_empirical: total_variation(&target, &pr),
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn mmi_global_optimum() -> CheckReport {
    timed(4, "MMI global optimum", 90.0, || {
        let mut ok = true;
        let mut parts = Vec::new();
        for beta in [0.0, 0.5, 1.0] {
            let r = table_mmi_run(1.0, beta)?;
            ok &= r.total_variation <= 1e-3 && r.seconds < 30.0;
            if beta == 0.0 {
                ok &= r.target_vs_empirical < 1e-12;
                parts.push(format!("β=0 target vs Pr {:.1e}", r.target_vs_empirical));
            }
            parts.push(format!("β={beta} TV {:.2e} in {:.1}s", r.total_variation, r.seconds));
        }
        Ok((ok, parts.join("; ")))
    })
}

pub fn mmi_equals_ce() -> CheckReport {
    timed(5, "MMI/CE equivalence", 60.0, || {
        let (mut loss_gap, mut grad_gap) = (0.0f64, 0.0f64);
        let refs = [seq(&[0, 1]), seq(&[1]), seq(&[1, 1, 0])];
        for seed in 0..6u64 {
            let m = micro_model(KINDS[seed as usize % 3], 2, seed)?;
            let xs: Vec<Matrix> = (0..3).map(|i| micro_features(3 + i, seed * 10 + i as u64)).collect();
            let emp = EmpiricalDistribution::from_pairs(xs.iter().cloned().zip(refs.iter().cloned()).collect())?;
            let mmi = mmi_loss_exact(&m, &UniformLm::new(2), SeqScales::new(1.0, 0.0)?, &emp, 5)?;
            let batch: Vec<_> = xs.iter().zip(&refs).map(|(x, a)| (x, a.as_slice())).collect();
            let ce = ce_loss_and_grad(&m, &batch)?;
            loss_gap = loss_gap.max((mmi.loss - ce.loss).abs());
            grad_gap = mmi.grad.iter().zip(&ce.grad).map(|(a, b)| (a - b).abs()).fold(grad_gap, f64::max);
        }
        Ok((
            loss_gap < 1e-10 && grad_gap < 1e-10,
            format!("6 cases, max |loss diff| {loss_gap:.1e}, max |grad diff| {grad_gap:.1e}"),
        ))
    })
}

pub fn mbr_peaking() -> CheckReport {
    timed(6, "MBR optimum peaking", 30.0, || {
        let space = all_sequences(2, 3);
        let lm = UniformLm::new(2);
        let s = SeqScales::new(1.0, 0.0)?;
        let mut masses = Vec::new();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let targets = random_support(&mut rng, &space, 3);
            let emp = EmpiricalDistribution::new(vec![EmpiricalUtterance {
                input: 0usize,
                weight: 1.0,
                targets: targets.clone(),
            }])?;
            let mut model = TableModel::new(2, 3, 1)?;
            let mut params = model.params().to_vec();
            gradient_descent(&mut params, TABLE_STEPS, TABLE_STEP_SIZE, |w| {
                model.params_mut().copy_from_slice(w);
                mbr_loss_exact(&model, &lm, s, &emp, 3, edit_risk)
            })?;
            model.params_mut().copy_from_slice(&params);
            let best = bayes_optimal_sequence(&targets, edit_risk, &space)?;
            masses.push(model.distribution(0)?[&best]);
        }
        let low = masses.iter().copied().fold(1.0, f64::min);
        Ok((low >= 0.99, format!("5 distributions, min mass on the Bayes-optimal sequence {low:.4}")))
    })
}

pub fn lf_mmi_pruning() -> CheckReport {
    timed(7, "LF-MMI pruning soundness", 30.0, || {
        let mut worst = 0.0f64;
        for seed in 0..5u64 {
            let v = 2 + seed as usize % 2;
            let m = micro_model(PredictorKind::ContextOne, v, seed)?;
            let x = micro_features(4, seed);
            let corpus: Vec<_> = [seq(&[0, 1]), seq(&[1, 1]), seq(&[0])].into_iter().collect();
            let lm = train_ngram(&corpus, v, 2, 0.4)?;
            let s = SeqScales::new(1.0, 0.7)?;
            let lf = lf_mmi_log_denominator(&m, &lm, s, &x, None)?;
            let ex = exact_log_denominator(&m, &lm, s, &x, 4)?;
            worst = worst.max((lf - ex).abs());
        }
        // Wide vocabulary so that top-20 actually discards label contexts.
        let v = 30;
        let m = micro_model(PredictorKind::ContextOne, v, 11)?;
        let x = micro_features(3, 11);
        let corpus: Vec<_> = (0..v as u32).map(|i| seq(&[i, (i * 7 + 3) % v as u32])).collect();
        let lm = train_ngram(&corpus, v, 2, 0.2)?;
        let s = SeqScales::new(1.0, 0.5)?;
        let ex = exact_log_denominator(&m, &lm, s, &x, 3)?;
        let unpruned = lf_mmi_log_denominator(&m, &lm, s, &x, None)?;
        worst = worst.max((unpruned - ex).abs());
        let pruned = lf_mmi_log_denominator(&m, &lm, s, &x, Some(LF_MMI_DEFAULT_TOP_K))?;
        Ok((
            worst < 1e-9,
            format!(
                "max |unpruned − exact| {worst:.1e}; top-{LF_MMI_DEFAULT_TOP_K} log-denominator error {:.3e} (|𝒱|={v}, T=3)",
                ex - pruned
            ),
        ))
    })
}

/// Log-score of every label sequence by enumerating all alignments with the
/// (optionally reduced) per-frame distributions.
fn alignment_scores(
    model: &TransducerParams,
    x: &Matrix,
    reduction: BlankReduction,
) -> Result<BTreeMap<LabelSequence, f64>> {
    let v = model.vocab().len();
    let enc = model.encode(x)?;
    let mut sums: BTreeMap<LabelSequence, f64> = BTreeMap::new();
    for code in 0..(v + 1).pow(x.rows() as u32) {
        let mut c = code;
        let mut labels = Vec::new();
        let mut p = 1.0;
        for t in 0..x.rows() {
            let sym = c % (v + 1);
            c /= v + 1;
            let ctx = model.predict_context(&labels)?;
            p *= reduce_blank(&model.step_posterior(enc.row(t), &ctx)?, reduction)?[sym];
            if sym > 0 {
                labels.push(Label::new(sym as u32 - 1));
            }
        }
        *sums.entry(labels).or_insert(0.0) += p;
    }
    Ok(sums.into_iter().map(|(k, p)| (k, p.ln())).collect())
}

fn label_chain(scorer: &dyn SequenceScorer, a: &[Label]) -> f64 {
    (0..a.len()).map(|s| scorer.next_log_probs(&a[..s]).labels[a[s].index()]).sum()
}

fn fused_argmax(
    model: &TransducerParams,
    x: &Matrix,
    elm: &dyn SequenceScorer,
    ilm: Option<&IlmEstimate>,
    config: &BeamConfig,
) -> Result<(LabelSequence, f64)> {
    let tr = alignment_scores(model, x, config.blank_reduction)?;
    let mut best: Option<(LabelSequence, f64)> = None;
    for a in all_sequences(model.vocab().len(), x.rows()) {
        let mut s = tr[&a];
        if config.fusion_mode != FusionMode::None {
            s += config.lambda1 * elm.score(&a)?;
        }
        if let Some(i) = ilm {
            s -= config.lambda2 * label_chain(i, &a);
        }
        let better = match &best {
            None => true,
            Some((b, bs)) => s > *bs || (s == *bs && (a.len(), &a) < (b.len(), b)),
        };
        if better {
            best = Some((a, s));
        }
    }
    Ok(best.expect("the empty sequence always exists"))
}

fn same_output(a: &[Hypothesis], b: &[Hypothesis]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.labels == y.labels
                && x.transducer.to_bits() == y.transducer.to_bits()
                && x.combined.to_bits() == y.combined.to_bits()
        })
}

fn micro_elm(v: usize) -> Result<NGramLm> {
    let corpus: Vec<LabelSequence> = [seq(&[0, 1]), seq(&[1, 1, 0]), seq(&[0]), seq(&[1, 0, 1, 1])]
        .into_iter()
        .map(|s| s.into_iter().filter(|l| l.index() < v).collect())
        .collect();
    Ok(train_ngram(&corpus, v, 3, 0.2)?)
}

pub fn decoder_exactness() -> CheckReport {
    timed(8, "decoder exactness", 10.0, || {
        let mut cases = 0;
        let mut mismatches = 0;
        let mut worst = 0.0f64;
        for kind in KINDS {
            for v in 1..=2usize {
                for t in 1..=4usize {
                    let seed = 10 * v as u64 + t as u64;
                    let model = micro_model(kind, v, seed)?;
                    let x = micro_features(t, seed + 3);
                    let elm = micro_elm(v)?;
                    let zero = zero_encoder_ilm(&model, true);
                    let dr = density_ratio_ilm(&[seq(&[0]), seq(&[0, 0])], v, &DensityRatioConfig::default())?;
                    let beam = (v + 1).pow(t as u32);
                    for mode in FusionMode::ALL {
                        let mut config = BeamConfig { fusion_mode: mode, ..BeamConfig::plain(beam) };
                        if mode != FusionMode::None {
                            config.lambda1 = 0.7;
                        }
                        if mode.uses_ilm() {
                            config.lambda2 = 0.4;
                        }
                        if mode == FusionMode::SfReduceBlank {
                            config.blank_reduction = BlankReduction::Linear(0.3);
                        }
                        let ilm = match mode {
                            FusionMode::SfIlm => Some(&zero),
                            FusionMode::SfDr => Some(&dr),
                            _ => None,
                        };
                        let top = beam_search(&model, &x, Some(&elm), ilm, &config)?.swap_remove(0);
                        let (a, s) = fused_argmax(&model, &x, &elm, ilm, &config)?;
                        if top.labels != a {
                            mismatches += 1;
                        }
                        worst = worst.max((top.combined - s).abs());
                        cases += 1;
                    }
                }
            }
        }

        let mut identities = true;
        for seed in 0..4u64 {
            let model = micro_model(PredictorKind::Elman, 3, seed)?;
            let x = micro_features(5, seed);
            let elm = micro_elm(3)?;
            let ilm = zero_encoder_ilm(&model, true);
            let none = BeamConfig { n_best_out: 4, ..BeamConfig::plain(3) };
            let sf0 = BeamConfig { fusion_mode: FusionMode::Sf, ..none };
            let sf = BeamConfig { lambda1: 0.5, ..sf0 };
            let ilm0 = BeamConfig { fusion_mode: FusionMode::SfIlm, ..sf };
            identities &= same_output(
                &beam_search(&model, &x, None, None, &none)?,
                &beam_search(&model, &x, Some(&elm), None, &sf0)?,
            );
            identities &= same_output(
                &beam_search(&model, &x, Some(&elm), None, &sf)?,
                &beam_search(&model, &x, Some(&elm), Some(&ilm), &ilm0)?,
            );
        }
        Ok((
            mismatches == 0 && worst < 1e-9 && identities,
            format!(
                "{cases} exhaustive cases, {mismatches} top-1 mismatches, max score diff {worst:.1e}; \
                 λ₁ = 0 / λ₂ = 0 identities bitwise: {identities}"
            ),
        ))
    })
}

/// Criteria 1 to 8 in order.
pub fn run_all() -> Vec<CheckReport> {
    vec![
        posterior_normalization(),
        alignment_sum_oracle(),
        gradient_suite(),
        mmi_global_optimum(),
        mmi_equals_ce(),
        mbr_peaking(),
        lf_mmi_pruning(),
        decoder_exactness(),
    ]
}
