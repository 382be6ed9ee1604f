//! Lattice-free MMI with a bigram-composable denominator.
//!
//! Denominator states are `(frame, last emitted label)` with a start state.
//! With a context-1 prediction network the transducer step distribution
//! depends only on that state, so the unpruned graph sums every label
//! sequence of length ≤ T. Path weights are raised to `α` per frame, which
//! equals the sequence-level `P_RNNT^α` only at `α = 1`.

use super::SeqScales;
use crate::error::{Error, Result};
use crate::lattice::{LossResult, UtteranceGraph, ORACLE_LIMIT};
use crate::lm::SequenceScorer;
use crate::model::{all_sequences, count_sequences, EncoderCache, Label, PredictionCache, TransducerParams, BLANK};
use crate::nn::Matrix;
use crate::numerics::{log_add, log_sum_exp_unchecked};

pub const LF_MMI_DEFAULT_TOP_K: usize = 20;

struct DenominatorGraph {
    enc: EncoderCache,
    pred: PredictionCache,
    hidden: Vec<f64>,
    log_probs: Vec<f64>,
    /// `β · log P_LM(k | c)` per state `c`, labels then EOS.
    lm_steps: Vec<Vec<f64>>,
    fwd: Vec<f64>,
    log_den: f64,
}

fn check_inputs(model: &TransducerParams, lm: &dyn SequenceScorer, top_k: Option<usize>) -> Result<()> {
    if model.config().context_size() != Some(1) {
        return Err(Error::Config("lattice-free MMI needs a context-1 prediction network".into()));
    }
    match lm.context_order() {
        Some(o) if o <= 2 => {}
        _ => return Err(Error::Config("lattice-free MMI needs an LM of order at most 2".into())),
    }
    if top_k == Some(0) {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    if lm.vocab_size() != model.vocab().len() {
        return Err(Error::Config("LM and model vocabularies differ".into()));
    }
    Ok(())
}

impl DenominatorGraph {
    fn build(
        model: &TransducerParams,
        lm: &dyn SequenceScorer,
        scales: SeqScales,
        features: &Matrix,
        top_k: Option<usize>,
    ) -> Self {
        let v = model.vocab().len();
        let n = v + 1;
        let k_out = model.vocab().output_dim();
        let frames = features.rows();
        let enc = model.encode_cached(features);
        let ph = model.joint_project_encoder(&enc.out);
        let mut rows = vec![model.sos_row()];
        rows.extend(0..v);
        let pred = model.predict_rows(rows);
        let pg = model.joint_project_prediction(&pred.out);
        let j = pg.cols();

        let mut hidden = vec![0.0; frames * n * j];
        let mut log_probs = vec![0.0; frames * n * k_out];
        for t in 0..frames {
            for c in 0..n {
                let i = t * n + c;
                model.joint_node(
                    ph.row(t),
                    pg.row(c),
                    &mut hidden[i * j..(i + 1) * j],
                    &mut log_probs[i * k_out..(i + 1) * k_out],
                );
            }
        }
        let lm_steps: Vec<Vec<f64>> = (0..n)
            .map(|c| {
                let history: Vec<Label> = if c == 0 { Vec::new() } else { vec![Label::new((c - 1) as u32)] };
                let step = lm.next_log_probs(&history);
                let eos = step.eos.unwrap_or(0.0);
                step.labels.iter().chain(std::iter::once(&eos)).map(|l| scales.combine(0.0, *l)).collect()
            })
            .collect();

        let alpha = scales.alpha();
        let mut fwd = vec![f64::NEG_INFINITY; (frames + 1) * n];
        fwd[0] = 0.0;
        for t in 0..frames {
            for c in 0..n {
                let f = fwd[t * n + c];
                if f == f64::NEG_INFINITY {
                    continue;
                }
                let lp = &log_probs[(t * n + c) * k_out..(t * n + c + 1) * k_out];
                let next = (t + 1) * n;
                fwd[next + c] = log_add(fwd[next + c], f + alpha * lp[BLANK]);
                for k in 0..v {
                    let w = alpha * lp[k + 1] + lm_steps[c][k];
                    fwd[next + k + 1] = log_add(fwd[next + k + 1], f + w);
                }
            }
            if let Some(keep) = top_k {
                let layer = &mut fwd[(t + 1) * n..(t + 2) * n];
                let mut order: Vec<usize> = (0..n).filter(|c| layer[*c] > f64::NEG_INFINITY).collect();
                if order.len() > keep {
                    order.sort_by(|a, b| layer[*b].total_cmp(&layer[*a]).then(a.cmp(b)));
                    for c in &order[keep..] {
                        layer[*c] = f64::NEG_INFINITY;
                    }
                }
            }
        }
        let finals: Vec<f64> = (0..n).map(|c| fwd[frames * n + c] + lm_steps[c][v]).collect();
        let log_den = log_sum_exp_unchecked(&finals);
        DenominatorGraph { enc, pred, hidden, log_probs, lm_steps, fwd, log_den }
    }

    /// `grad += weight · ∂ log D / ∂θ`.
    fn backward(&self, model: &TransducerParams, scales: SeqScales, weight: f64, grad: &mut [f64]) {
        let v = model.vocab().len();
        let n = v + 1;
        let k_out = v + 1;
        let frames = self.enc.out.rows();
        let j = model.config().joint_hidden;
        let alpha = scales.alpha();
        let mut bwd = vec![f64::NEG_INFINITY; (frames + 1) * n];
        for c in 0..n {
            if self.fwd[frames * n + c] > f64::NEG_INFINITY {
                bwd[frames * n + c] = self.lm_steps[c][v];
            }
        }
        let mut d_ph = Matrix::zeros(frames, j);
        let mut d_pg = Matrix::zeros(n, j);
        let mut d_logits = vec![0.0; k_out];
        let mut d_pre = vec![0.0; j];
        let mut occ = vec![0.0; k_out];
        for t in (0..frames).rev() {
            for c in 0..n {
                let f = self.fwd[t * n + c];
                if f == f64::NEG_INFINITY {
                    continue;
                }
                let i = t * n + c;
                let lp = &self.log_probs[i * k_out..(i + 1) * k_out];
                let next = (t + 1) * n;
                let mut b = alpha * lp[BLANK] + bwd[next + c];
                occ[BLANK] = (f + alpha * lp[BLANK] + bwd[next + c] - self.log_den).exp();
                for k in 0..v {
                    let w = alpha * lp[k + 1] + self.lm_steps[c][k] + bwd[next + k + 1];
                    b = log_add(b, w);
                    occ[k + 1] = (f + w - self.log_den).exp();
                }
                bwd[i] = b;
                let total: f64 = occ.iter().sum();
                if total == 0.0 {
                    continue;
                }
                for o in 0..k_out {
                    d_logits[o] = weight * alpha * (occ[o] - total * lp[o].exp());
                }
                d_pre.iter_mut().for_each(|d| *d = 0.0);
                model.joint_node_backward(&self.hidden[i * j..(i + 1) * j], &d_logits, grad, &mut d_pre);
                for (x, y) in d_ph.row_mut(t).iter_mut().zip(&d_pre) {
                    *x += y;
                }
                for (x, y) in d_pg.row_mut(c).iter_mut().zip(&d_pre) {
                    *x += y;
                }
            }
        }
        let d_enc = model.joint_encoder_backward(&self.enc.out, &d_ph, grad);
        model.backward_encoder(&self.enc, &d_enc, grad);
        let d_pred = model.joint_prediction_backward(&self.pred.out, &d_pg, grad);
        model.backward_prediction(&self.pred, &d_pred, grad);
    }
}

/// `log Σ_a P_RNNT(a|X)^α P_LM(a)^β` through the `(frame, last label)` graph,
/// keeping the `top_k` best states per frame (`None` disables pruning).
pub fn lf_mmi_log_denominator(
    model: &TransducerParams,
    lm: &dyn SequenceScorer,
    scales: SeqScales,
    features: &Matrix,
    top_k: Option<usize>,
) -> Result<f64> {
    check_inputs(model, lm, top_k)?;
    UtteranceGraph::forward(model, features, &[])?;
    Ok(DenominatorGraph::build(model, lm, scales, features, top_k).log_den)
}

/// The same denominator by enumerating every sequence of length ≤ `max_len`.
pub fn exact_log_denominator(
    model: &TransducerParams,
    lm: &dyn SequenceScorer,
    scales: SeqScales,
    features: &Matrix,
    max_len: usize,
) -> Result<f64> {
    let count = count_sequences(model.vocab().len(), max_len);
    if count > ORACLE_LIMIT {
        return Err(Error::OracleScale(format!("{count} sequences exceed {ORACLE_LIMIT}")));
    }
    let space = all_sequences(model.vocab().len(), max_len);
    let (lp, _) = UtteranceGraph::forward(model, features, &space)?;
    let combined =
        space.iter().zip(&lp).map(|(a, t)| Ok(scales.combine(*t, lm.score(a)?))).collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp_unchecked(&combined))
}

/// `log D − α log P_RNNT(ref|X) − β log P_LM(ref)` and its gradient.
pub fn lf_mmi_loss(
    model: &TransducerParams,
    lm: &dyn SequenceScorer,
    scales: SeqScales,
    features: &Matrix,
    reference: &[Label],
    top_k: Option<usize>,
) -> Result<LossResult> {
    check_inputs(model, lm, top_k)?;
    let space = [reference.to_vec()];
    let (scores, num) = UtteranceGraph::forward(model, features, &space)?;
    if scores[0] == f64::NEG_INFINITY {
        return Err(Error::TrainingData(format!("reference of length {} cannot be scored", reference.len())));
    }
    let den = DenominatorGraph::build(model, lm, scales, features, top_k);
    let mut grad = vec![0.0; model.param_count()];
    num.backward(model, &[-scales.alpha()], &mut grad);
    den.backward(model, scales, 1.0, &mut grad);
    let loss = den.log_den - scales.combine(scores[0], lm.score(reference)?);
    Ok(LossResult { loss, grad })
}
