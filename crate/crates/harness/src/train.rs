//! CE training, N-best generation and sequence-discriminative fine-tuning.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tslab_core::decoder::{beam_search, edit_distance, to_nbest_list, BeamConfig, FusionMode};
use tslab_core::lattice::{ce_loss_and_grad, LossResult};
use tslab_core::lm::{train_neural_lm, train_ngram, NGramLm, NeuralLm, NeuralLmConfig, SequenceScorer};
use tslab_core::model::{count_sequences, Label, ModelConfig, PredictorKind, TransducerParams, Vocabulary};
use tslab_core::seqtrain::{
    lf_mmi_loss, mbr_loss_exact, mbr_loss_nbest, mmi_loss_exact, mmi_loss_nbest, EmpiricalDistribution, NBestList,
    SeqScales,
};

use crate::config::ExperimentConfig;
use crate::data::Utterance;
use crate::error::{HarnessError, Result};

/// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8), or plain
/// gradient descent when `plain` is set.
#[derive(Clone, Debug)]
pub struct Adam {
    plain: bool,
    step_size: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, step_size: f64) -> Self {
        Self { plain: false, step_size, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn sgd(step_size: f64) -> Self {
        Self { plain: true, step_size, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        if self.plain {
            params.iter_mut().zip(grad).for_each(|(p, g)| *p -= self.step_size * g);
            return;
        }
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            params[i] -= self.step_size * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
    }
}

pub fn model_config(c: &ExperimentConfig) -> Result<ModelConfig> {
    let mut m = ModelConfig::new(Vocabulary::with_size(c.vocab_size)?, c.feature_dim);
    m.window = c.window;
    m.encoder_hidden = c.encoder_hidden;
    m.encoder_dim = c.encoder_dim;
    m.embed_dim = c.embed_dim;
    m.predictor = PredictorKind::parse(&c.predictor)?;
    m.predictor_dim = c.predictor_dim;
    m.joint_hidden = c.joint_hidden;
    m.validate()?;
    Ok(m)
}

pub fn initial_model(c: &ExperimentConfig) -> Result<TransducerParams> {
    Ok(TransducerParams::new(model_config(c)?, c.derived_seed("init"), c.init_scale)?)
}

/// Seeded minibatch order for one epoch.
fn epoch_batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn check_finite(loss: f64, grad: &[f64], phase: &str) -> Result<()> {
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(HarnessError::Core(tslab_core::Error::Training(format!("{phase}: non-finite loss or gradient"))));
    }
    Ok(())
}

/// Minibatch CE training; returns the mean training loss of every epoch.
pub fn train_ce(model: &mut TransducerParams, train: &[Utterance], c: &ExperimentConfig) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(c.derived_seed("ce-order"));
    let mut opt = Adam::new(model.param_count(), c.ce_step_size);
    let mut trace = Vec::with_capacity(c.ce_epochs);
    for _ in 0..c.ce_epochs {
        let mut total = 0.0;
        for idx in epoch_batches(train.len(), c.batch_size, &mut rng) {
            let batch: Vec<_> = idx.iter().map(|i| (&train[*i].features, train[*i].labels.as_slice())).collect();
            let LossResult { loss, grad } = ce_loss_and_grad(model, &batch)?;
            check_finite(loss, &grad, "CE")?;
            total += loss * idx.len() as f64;
            opt.step(model.as_mut_slice(), &grad);
        }
        trace.push(total / train.len() as f64);
    }
    Ok(trace)
}

pub fn train_elm(text: &[Vec<Label>], c: &ExperimentConfig) -> Result<NeuralLm> {
    let lm = NeuralLmConfig {
        embed_dim: c.elm_embed,
        hidden_dim: c.elm_hidden,
        steps: c.elm_steps,
        step_size: c.elm_step_size,
        init_scale: 0.1,
        seed: c.derived_seed("elm"),
    };
    Ok(train_neural_lm(text, c.vocab_size, &lm)?)
}

pub fn train_bigram(text: &[Vec<Label>], c: &ExperimentConfig) -> Result<NGramLm> {
    Ok(train_ngram(text, c.vocab_size, 2, c.ngram_delta)?)
}

/// Beam search with the CE model and full-context LM fusion; cached scores
/// are the exact transducer and LM log-probabilities.
pub fn generate_nbest(
    model: &TransducerParams,
    utts: &[Utterance],
    lm: &dyn SequenceScorer,
    c: &ExperimentConfig,
) -> Result<Vec<NBestList>> {
    let config = BeamConfig {
        beam_size: c.nbest_beam,
        fusion_mode: FusionMode::Sf,
        lambda1: c.nbest_lambda,
        n_best_out: c.nbest_size,
        ..BeamConfig::plain(c.nbest_beam)
    };
    utts.iter()
        .map(|u| {
            let hyps = beam_search(model, &u.features, Some(lm), None, &config)?;
            Ok(to_nbest_list(&u.id, model, &u.features, lm, &hyps)?)
        })
        .collect()
}

fn edit_risk(h: &[Label], r: &[Label]) -> f64 {
    edit_distance(h, r) as f64
}

/// Fine-tunes `model` with `criterion` against the fixed N-best lists.
/// Returns the mean loss of every epoch.
pub fn finetune(
    model: &mut TransducerParams,
    train: &[Utterance],
    nbest: &[NBestList],
    lm: &dyn SequenceScorer,
    criterion: &str,
    c: &ExperimentConfig,
) -> Result<Vec<f64>> {
    let scales = SeqScales::new(c.alpha, c.beta)?;
    if nbest.len() != train.len() {
        return Err(HarnessError::PipelineOrder(format!(
            "{} N-best lists for {} training utterances",
            nbest.len(),
            train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.derived_seed(&format!("ft-order-{criterion}")));
    let mut opt = match c.ft_optimizer.as_str() {
        "sgd" => Adam::sgd(c.ft_step_size),
        _ => Adam::new(model.param_count(), c.ft_step_size),
    };
    let mut trace = Vec::with_capacity(c.ft_epochs);
    for _ in 0..c.ft_epochs {
        let mut total = 0.0;
        for idx in epoch_batches(train.len(), c.batch_size, &mut rng) {
            let mut grad = vec![0.0; model.param_count()];
            let mut loss = 0.0;
            let w = 1.0 / idx.len() as f64;
            for i in &idx {
                let u = &train[*i];
                let r = match criterion {
                    "mmi_nbest" => mmi_loss_nbest(model, &u.features, lm, scales, &nbest[*i], &u.labels)?,
                    "mbr_nbest" => mbr_loss_nbest(model, &u.features, lm, scales, &nbest[*i], &u.labels, edit_risk)?,
                    "lf_mmi" => lf_mmi_loss(model, lm, scales, &u.features, &u.labels, Some(c.lf_mmi_top_k))?,
                    "mmi_exact" | "mbr_exact" => {
                        let max_len = u.features.rows();
                        let count = count_sequences(c.vocab_size, max_len);
                        if count > tslab_core::lattice::ORACLE_LIMIT {
                            return Err(HarnessError::Config(format!(
                                "{criterion} would enumerate {count} sequences for {}",
                                u.id
                            )));
                        }
                        let emp = EmpiricalDistribution::from_pairs(vec![(u.features.clone(), u.labels.clone())])?;
                        if criterion == "mmi_exact" {
                            mmi_loss_exact(model, lm, scales, &emp, max_len)?
                        } else {
                            mbr_loss_exact(model, lm, scales, &emp, max_len, edit_risk)?
                        }
                    }
                    other => return Err(HarnessError::Config(format!("unknown criterion {other:?}"))),
                };
                loss += w * r.loss;
                grad.iter_mut().zip(&r.grad).for_each(|(g, x)| *g += w * x);
            }
            check_finite(loss, &grad, criterion)?;
            total += loss * idx.len() as f64;
            opt.step(model.as_mut_slice(), &grad);
        }
        trace.push(total / train.len() as f64);
    }
    Ok(trace)
}
