mod common;

use common::{feats, micro};
use proptest::prelude::*;
use tslab_core::lattice::{brute_force_seq_log_prob, posterior_table, seq_log_prob, Lattice};
use tslab_core::model::{Label, PredictorKind};

fn kind() -> impl Strategy<Value = PredictorKind> {
    prop_oneof![Just(PredictorKind::ContextOne), Just(PredictorKind::Elman), Just(PredictorKind::Lstm)]
}

fn case() -> impl Strategy<Value = (PredictorKind, usize, usize, Vec<u32>, u64)> {
    (kind(), 1usize..=3, 1usize..=5, any::<u64>()).prop_flat_map(|(k, v, t, seed)| {
        (Just(k), Just(v), Just(t), prop::collection::vec(0..v as u32, 0..=t), Just(seed))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn lattice_sum_equals_alignment_enumeration((k, v, t, ids, seed) in case()) {
        let model = micro(k, v, seed);
        let x = feats(t, seed % 97);
        let target: Vec<Label> = ids.into_iter().map(Label::new).collect();
        let fast = seq_log_prob(&model, &x, &target).unwrap().value();
        let slow = brute_force_seq_log_prob(&model, &x, &target).unwrap().value();
        prop_assert!((fast - slow).abs() <= 1e-10, "{} vs {}", fast, slow);
    }

    #[test]
    fn forward_backward_agree_at_every_cut((k, v, t, ids, seed) in case()) {
        let model = micro(k, v, seed);
        let x = feats(t, seed % 89);
        let target: Vec<Label> = ids.into_iter().map(Label::new).collect();
        let lat = Lattice::build(&model, &x, &target).unwrap();
        for cut in 0..=t {
            prop_assert!((lat.cut_log_prob(cut) - lat.log_prob()).abs() <= 1e-10);
        }
    }
}

#[test]
fn posteriors_normalize_over_twenty_models() {
    for seed in 0..20u64 {
        let kind = [PredictorKind::ContextOne, PredictorKind::Elman, PredictorKind::Lstm][seed as usize % 3];
        let model = micro(kind, 2, seed);
        let table = posterior_table(&model, &feats(4, seed), 4).unwrap();
        assert_eq!(table.len(), 31);
        let total: f64 = table.values().sum();
        assert!((total - 1.0).abs() <= 1e-9, "seed {seed}: {total}");
    }
}
