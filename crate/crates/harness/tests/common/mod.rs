#![allow(dead_code)]

use std::path::Path;

use tslab_harness::ExperimentConfig;

/// A run small enough for integration tests.
pub fn tiny(dir: &Path) -> ExperimentConfig {
    ExperimentConfig {
        work_dir: dir.to_path_buf(),
        seed: 3,
        vocab_size: 4,
        max_len: 4,
        train_utts: 32,
        dev_utts: 8,
        elm_sentences: 100,
        ce_epochs: 2,
        ft_epochs: 1,
        elm_steps: 10,
        lambda1_grid: vec![0.0, 0.3],
        lambda2_grid: vec![0.0, 0.2],
        rho_grid: vec![0.5],
        context1_tables: false,
        ..ExperimentConfig::default()
    }
}
