mod common;

use std::collections::BTreeMap;

use common::{feats, micro, seq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tslab_core::decoder::edit_distance;
use tslab_core::ilm::TableScorer;
use tslab_core::lattice::{ce_loss_and_grad, posterior_table, seq_log_prob};
use tslab_core::lm::{train_ngram, SequenceScorer, UniformLm};
use tslab_core::model::{all_sequences, Label, LabelSequence, PredictorKind};
use tslab_core::seqtrain::{
    bayes_optimal_sequence, exact_log_denominator, gradient_descent, lf_mmi_log_denominator, lf_mmi_loss,
    mbr_loss_exact, mbr_loss_nbest, mmi_loss_exact, mmi_loss_nbest, mmi_optimum_target, p_seq, total_variation,
    EmpiricalDistribution, EmpiricalUtterance, NBestEntry, NBestList, SeqScales, SequenceModel, TableModel,
    LF_MMI_DEFAULT_TOP_K,
};

fn risk(h: &[Label], a: &[Label]) -> f64 {
    edit_distance(h, a) as f64
}

fn list_of(space: &[LabelSequence], lm: &dyn SequenceScorer) -> NBestList {
    NBestList::new(
        "u",
        space.iter().map(|a| NBestEntry { labels: a.clone(), transducer: 0.0, lm: lm.score(a).unwrap() }).collect(),
    )
    .unwrap()
}

#[test]
fn p_seq_reduces_to_posterior() {
    let m = micro(PredictorKind::Elman, 2, 7);
    let x = feats(4, 7);
    let space = all_sequences(2, 4);
    let q = p_seq(&m, &x, &UniformLm::new(2), SeqScales::new(1.0, 0.0).unwrap(), &space).unwrap();
    let table = posterior_table(&m, &x, 4).unwrap();
    for (a, p) in space.iter().zip(&q) {
        assert!((table[a] - p).abs() < 1e-10);
    }
}

#[test]
fn exact_mmi_equals_ce() {
    for seed in 0..6 {
        let kind = [PredictorKind::ContextOne, PredictorKind::Elman, PredictorKind::Lstm][seed as usize % 3];
        let m = micro(kind, 2, seed);
        let xs: Vec<_> = (0..3).map(|i| feats(3 + i, seed * 10 + i as u64)).collect();
        let refs = [seq(&[0, 1]), seq(&[1]), seq(&[1, 1, 0])];
        let emp = EmpiricalDistribution::from_pairs(xs.iter().cloned().zip(refs.iter().cloned()).collect()).unwrap();
        let mmi = mmi_loss_exact(&m, &UniformLm::new(2), SeqScales::new(1.0, 0.0).unwrap(), &emp, 5).unwrap();
        let batch: Vec<_> = xs.iter().zip(&refs).map(|(x, a)| (x, a.as_slice())).collect();
        let ce = ce_loss_and_grad(&m, &batch).unwrap();
        assert!((mmi.loss - ce.loss).abs() < 1e-10, "{} vs {}", mmi.loss, ce.loss);
        for (a, b) in mmi.grad.iter().zip(&ce.grad) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn nbest_limits() {
    let m = micro(PredictorKind::Lstm, 2, 9);
    let x = feats(3, 9);
    let lm = train_ngram(&[seq(&[0]), seq(&[1, 0])], 2, 2, 0.3).unwrap();
    let s = SeqScales::new(0.6, 0.4).unwrap();
    let reference = seq(&[1, 0]);
    let full = all_sequences(2, 3);
    let nb = mmi_loss_nbest(&m, &x, &lm, s, &list_of(&full, &lm), &reference).unwrap();
    let emp = EmpiricalDistribution::from_pairs(vec![(x.clone(), reference.clone())]).unwrap();
    let ex = mmi_loss_exact(&m, &lm, s, &emp, 3).unwrap();
    assert!((nb.loss - ex.loss).abs() < 1e-12);
    for (a, b) in nb.grad.iter().zip(&ex.grad) {
        assert!((a - b).abs() < 1e-12);
    }

    let only = list_of(&[reference.clone()], &lm);
    let r = mmi_loss_nbest(&m, &x, &lm, s, &only, &reference).unwrap();
    assert_eq!(r.loss, 0.0);
    assert!(r.grad.iter().all(|g| g.abs() < 1e-15));
    let r = mbr_loss_nbest(&m, &x, &lm, s, &only, &reference, risk).unwrap();
    assert_eq!(r.loss, 0.0);

    let list = list_of(&[seq(&[0]), seq(&[1]), seq(&[0, 0])], &lm);
    let r = mbr_loss_nbest(&m, &x, &lm, s, &list, &reference, |_: &[Label], _: &[Label]| 2.5).unwrap();
    assert!((r.loss - 2.5).abs() < 1e-12);
    assert!(r.grad.iter().all(|g| g.abs() < 1e-12));

    let long = seq(&[0, 1, 0, 1]);
    assert!(mmi_loss_nbest(&m, &x, &lm, s, &list, &long).is_err());
}

#[test]
fn mmi_loss_bounded_by_entropy() {
    let mut model = TableModel::new(2, 2, 1).unwrap();
    let targets = vec![(seq(&[0]), 0.5), (seq(&[1, 1]), 0.3), (seq(&[]), 0.2)];
    let entropy: f64 = -targets.iter().map(|(_, p)| p * f64::ln(*p)).sum::<f64>();
    let emp = EmpiricalDistribution::new(vec![EmpiricalUtterance { input: 0usize, weight: 1.0, targets }]).unwrap();
    let lm = UniformLm::new(2);
    let s = SeqScales::new(1.0, 0.5).unwrap();
    let mut last = f64::INFINITY;
    for _ in 0..50 {
        let r = mmi_loss_exact(&model, &lm, s, &emp, 2).unwrap();
        assert!(r.loss >= entropy - 1e-12);
        assert!(r.loss <= last + 1e-12);
        last = r.loss;
        for (w, g) in model.params_mut().iter_mut().zip(&r.grad) {
            *w -= 1.0 * g;
        }
    }
}

#[test]
fn lf_mmi_unpruned_matches_exact_denominator() {
    for seed in 0..5 {
        let m = micro(PredictorKind::ContextOne, 2, seed);
        let x = feats(4, seed);
        let lm = train_ngram(&[seq(&[0, 1]), seq(&[1, 1]), seq(&[0])], 2, 2, 0.4).unwrap();
        let s = SeqScales::new(1.0, 0.7).unwrap();
        let lf = lf_mmi_log_denominator(&m, &lm, s, &x, None).unwrap();
        let ex = exact_log_denominator(&m, &lm, s, &x, 4).unwrap();
        assert!((lf - ex).abs() < 1e-9, "{lf} vs {ex}");
        // With |𝒱| = 2 at most three states exist, so top-20 is exact too.
        let pruned = lf_mmi_log_denominator(&m, &lm, s, &x, Some(LF_MMI_DEFAULT_TOP_K)).unwrap();
        assert!((pruned - ex).abs() < 1e-9);
        let one = lf_mmi_log_denominator(&m, &lm, s, &x, Some(1)).unwrap();
        assert!(one <= ex + 1e-12);

        let reference = seq(&[1, 0]);
        let ce = -seq_log_prob(&m, &x, &reference).unwrap().value();
        let r = lf_mmi_loss(&m, &lm, SeqScales::new(1.0, 0.0).unwrap(), &x, &reference, None).unwrap();
        assert!((r.loss - ce).abs() < 1e-9);
    }
}

#[test]
fn lf_mmi_rejects_unsupported_inputs() {
    let lm = UniformLm::new(2);
    let s = SeqScales::new(1.0, 0.5).unwrap();
    let x = feats(3, 0);
    let rnn = micro(PredictorKind::Elman, 2, 0);
    assert!(lf_mmi_loss(&rnn, &lm, s, &x, &seq(&[0]), None).is_err());
    let c1 = micro(PredictorKind::ContextOne, 2, 0);
    assert!(lf_mmi_loss(&c1, &lm, s, &x, &seq(&[0]), Some(0)).is_err());
    let tri = train_ngram(&[seq(&[0])], 2, 3, 0.1).unwrap();
    assert!(lf_mmi_loss(&c1, &tri, s, &x, &seq(&[0]), None).is_err());
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

#[test]
fn table_model_reaches_mmi_optimum() {
    let space = all_sequences(2, 3);
    let lm = train_ngram(&[seq(&[0, 1]), seq(&[1]), seq(&[0, 0, 1]), seq(&[])], 2, 2, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let targets = random_support(&mut rng, &space, 4);
    for beta in [0.0, 0.5, 1.0] {
        let s = SeqScales::new(1.0, beta).unwrap();
        let emp = EmpiricalDistribution::new(vec![EmpiricalUtterance {
            input: 0usize,
            weight: 1.0,
            targets: targets.clone(),
        }])
        .unwrap();
        let mut model = TableModel::new(2, 3, 1).unwrap();
        let mut params = model.params().to_vec();
        gradient_descent(&mut params, 10_000, 4.0, |w| {
            model.params_mut().copy_from_slice(w);
            mmi_loss_exact(&model, &lm, s, &emp, 3)
        })
        .unwrap();
        model.params_mut().copy_from_slice(&params);
        let target = mmi_optimum_target(&targets, &lm, s).unwrap();
        if beta == 0.0 {
            let pr: BTreeMap<_, _> = targets.iter().cloned().collect();
            assert!(total_variation(&target, &pr) < 1e-12);
        }
        let tv = total_variation(&model.distribution(0).unwrap(), &target);
        assert!(tv <= 1e-3, "beta {beta}: tv {tv}");
    }
}

#[test]
fn table_model_peaks_on_bayes_optimum() {
    let space = all_sequences(2, 3);
    // With β > 0 the length bias of the LM can hand an early lead to a
    // suboptimal sequence, and plain gradient descent then stalls near that
    // vertex; the peaking claim concerns the risk minimizer, so β = 0 here.
    let lm = UniformLm::new(2);
    let s = SeqScales::new(1.0, 0.0).unwrap();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let targets = random_support(&mut rng, &space, 3);
        let emp = EmpiricalDistribution::new(vec![EmpiricalUtterance {
            input: 0usize,
            weight: 1.0,
            targets: targets.clone(),
        }])
        .unwrap();
        let mut model = TableModel::new(2, 3, 1).unwrap();
        let mut params = model.params().to_vec();
        gradient_descent(&mut params, 10_000, 4.0, |w| {
            model.params_mut().copy_from_slice(w);
            mbr_loss_exact(&model, &lm, s, &emp, 3, risk)
        })
        .unwrap();
        model.params_mut().copy_from_slice(&params);
        let best = bayes_optimal_sequence(&targets, risk, &space).unwrap();
        let mass = model.distribution(0).unwrap()[&best];
        assert!(mass >= 0.99, "seed {seed}: {mass}");
    }
}

#[test]
fn degenerate_lm_target_is_singular() {
    let lm = TableScorer::new(2, [(seq(&[0]), 1.0)].into_iter().collect()).unwrap();
    let r = mmi_optimum_target(&[(seq(&[1]), 1.0)], &lm, SeqScales::new(1.0, 1.0).unwrap());
    assert!(r.is_err());
}
