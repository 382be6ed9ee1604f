#![allow(dead_code)]

use tslab_core::model::{Label, ModelConfig, PredictorKind, TransducerParams, Vocabulary};
use tslab_core::nn::Matrix;

pub fn micro(kind: PredictorKind, vocab: usize, seed: u64) -> TransducerParams {
    let mut c = ModelConfig::new(Vocabulary::with_size(vocab).unwrap(), 2);
    c.predictor = kind;
    c.encoder_hidden = 3;
    c.encoder_dim = 3;
    c.embed_dim = 2;
    c.predictor_dim = 3;
    c.joint_hidden = 4;
    TransducerParams::new(c, seed, 0.8).unwrap()
}

pub fn feats(t: usize, seed: u64) -> Matrix {
    Matrix::from_vec(t, 2, (0..2 * t).map(|i| ((i as f64 + 1.0) * (seed as f64 + 0.37)).sin()).collect()).unwrap()
}

pub fn seq(ids: &[u32]) -> Vec<Label> {
    ids.iter().map(|i| Label::new(*i)).collect()
}
