//! Strictly monotonic alignment lattice.
//!
//! Node `(t, s)` means "before frame `t`, `s` labels emitted". Each frame
//! emits exactly one symbol: blank moves to `(t+1, s)`, label `a_{s+1}` to
//! `(t+1, s+1)`. Gradients flow through arc occupancies, never through path
//! enumeration.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::{all_sequences, EncoderCache, Label, LabelSequence, PredictionCache, TransducerParams, BLANK};
use crate::nn::Matrix;
use crate::numerics::{log_add, LogProb};

/// Largest enumeration the oracles will attempt.
pub const ORACLE_LIMIT: u128 = 1_000_000;

/// Score of a label sequence under the transducer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SeqLogProb {
    Reachable(LogProb),
    /// `S > T`: no alignment exists. Distinct from a reachable score that underflowed.
    Unreachable,
}

impl SeqLogProb {
    pub fn value(self) -> f64 {
        match self {
            SeqLogProb::Reachable(lp) => lp.value(),
            SeqLogProb::Unreachable => f64::NEG_INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossResult {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Forward/backward log-probabilities on the `(T+1) × (S+1)` grid.
#[derive(Clone, Debug)]
pub struct Lattice {
    frames: usize,
    labels: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl Lattice {
    fn idx(&self, t: usize, s: usize) -> usize {
        t * (self.labels + 1) + s
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn target_len(&self) -> usize {
        self.labels
    }

    pub fn alpha(&self, t: usize, s: usize) -> f64 {
        self.alpha[self.idx(t, s)]
    }

    pub fn beta(&self, t: usize, s: usize) -> f64 {
        self.beta[self.idx(t, s)]
    }

    /// `α(T, S) = log P_RNNT(a | X)`.
    pub fn log_prob(&self) -> f64 {
        self.alpha(self.frames, self.labels)
    }

    /// `log Σ_s exp(α(t,s) + β(t,s))`; equals `log_prob` at every `t`.
    pub fn cut_log_prob(&self, t: usize) -> f64 {
        (0..=self.labels).fold(f64::NEG_INFINITY, |acc, s| log_add(acc, self.alpha(t, s) + self.beta(t, s)))
    }

    pub fn build(model: &TransducerParams, features: &Matrix, target: &[Label]) -> Result<Self> {
        model.vocab().check(target)?;
        if target.len() > features.rows() {
            return Err(Error::Contract(format!(
                "target of length {} cannot align to {} frames",
                target.len(),
                features.rows()
            )));
        }
        let enc = model.encode(features)?;
        let ph = model.joint_project_encoder(&enc);
        Ok(SeqGraph::forward(model, &ph, target).lattice)
    }
}

/// Valid `s` range at frame `t` for a target of length `S` over `T` frames.
#[inline]
fn node_range(t: usize, frames: usize, labels: usize) -> std::ops::RangeInclusive<usize> {
    let lo = labels.saturating_sub(frames - t);
    let hi = t.min(labels);
    lo..=hi
}

/// Forward quantities of one label sequence on one utterance.
pub(crate) struct SeqGraph {
    pub target: LabelSequence,
    pred: PredictionCache,
    /// Per node `(t, s)`: joint hidden activations and log-probabilities.
    hidden: Vec<f64>,
    log_probs: Vec<f64>,
    pub lattice: Lattice,
}

impl SeqGraph {
    fn forward(model: &TransducerParams, ph: &Matrix, target: &[Label]) -> Self {
        let frames = ph.rows();
        let labels = target.len();
        let j = ph.cols();
        let v = model.vocab().output_dim();
        let pred = model.predict_sequence(target);
        let pg = model.joint_project_prediction(&pred.out);
        let nodes = frames * (labels + 1);
        let mut hidden = vec![0.0; nodes * j];
        let mut log_probs = vec![f64::NEG_INFINITY; nodes * v];
        for t in 0..frames {
            for s in node_range(t, frames, labels) {
                let n = t * (labels + 1) + s;
                model.joint_node(
                    ph.row(t),
                    pg.row(s),
                    &mut hidden[n * j..(n + 1) * j],
                    &mut log_probs[n * v..(n + 1) * v],
                );
            }
        }
        let grid = (frames + 1) * (labels + 1);
        let mut lattice =
            Lattice { frames, labels, alpha: vec![f64::NEG_INFINITY; grid], beta: vec![f64::NEG_INFINITY; grid] };
        let lp = |t: usize, s: usize, k: usize| log_probs[(t * (labels + 1) + s) * v + k];
        lattice.alpha[0] = 0.0;
        for t in 0..frames {
            for s in node_range(t, frames, labels) {
                let a = lattice.alpha[lattice.idx(t, s)];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                let nb = lattice.idx(t + 1, s);
                lattice.alpha[nb] = log_add(lattice.alpha[nb], a + lp(t, s, BLANK));
                if s < labels {
                    let nl = lattice.idx(t + 1, s + 1);
                    lattice.alpha[nl] = log_add(lattice.alpha[nl], a + lp(t, s, target[s].output_index()));
                }
            }
        }
        let end = lattice.idx(frames, labels);
        lattice.beta[end] = 0.0;
        for t in (0..frames).rev() {
            for s in node_range(t, frames, labels) {
                let mut b = lp(t, s, BLANK) + lattice.beta[lattice.idx(t + 1, s)];
                if s < labels {
                    b = log_add(b, lp(t, s, target[s].output_index()) + lattice.beta[lattice.idx(t + 1, s + 1)]);
                }
                let i = lattice.idx(t, s);
                lattice.beta[i] = b;
            }
        }
        SeqGraph { target: target.to_vec(), pred, hidden, log_probs, lattice }
    }

    /// Adds `weight · ∂ log P / ∂(joint pre-activations)` into `d_ph`, and
    /// backpropagates the prediction half straight into `grad`.
    fn backward(&self, model: &TransducerParams, weight: f64, d_ph: &mut Matrix, grad: &mut [f64]) {
        let log_p = self.lattice.log_prob();
        if weight == 0.0 || log_p == f64::NEG_INFINITY {
            return;
        }
        let frames = self.lattice.frames;
        let labels = self.lattice.labels;
        let j = d_ph.cols();
        let v = model.vocab().output_dim();
        let mut d_pg = Matrix::zeros(labels + 1, j);
        let mut d_logits = vec![0.0; v];
        let mut d_pre = vec![0.0; j];
        for t in 0..frames {
            for s in node_range(t, frames, labels) {
                let a = self.lattice.alpha(t, s);
                if a == f64::NEG_INFINITY {
                    continue;
                }
                let n = t * (labels + 1) + s;
                let lp = &self.log_probs[n * v..(n + 1) * v];
                let occ_blank = (a + lp[BLANK] + self.lattice.beta(t + 1, s) - log_p).exp();
                let (label_k, occ_label) = if s < labels {
                    let k = self.target[s].output_index();
                    (k, (a + lp[k] + self.lattice.beta(t + 1, s + 1) - log_p).exp())
                } else {
                    (usize::MAX, 0.0)
                };
                let occ = occ_blank + occ_label;
                if occ == 0.0 {
                    continue;
                }
                for (k, d) in d_logits.iter_mut().enumerate() {
                    *d = -occ * lp[k].exp();
                }
                d_logits[BLANK] += occ_blank;
                if label_k != usize::MAX {
                    d_logits[label_k] += occ_label;
                }
                d_logits.iter_mut().for_each(|d| *d *= weight);
                d_pre.iter_mut().for_each(|d| *d = 0.0);
                model.joint_node_backward(&self.hidden[n * j..(n + 1) * j], &d_logits, grad, &mut d_pre);
                for (x, y) in d_ph.row_mut(t).iter_mut().zip(&d_pre) {
                    *x += y;
                }
                for (x, y) in d_pg.row_mut(s).iter_mut().zip(&d_pre) {
                    *x += y;
                }
            }
        }
        let d_pred = model.joint_prediction_backward(&self.pred.out, &d_pg, grad);
        model.backward_prediction(&self.pred, &d_pred, grad);
    }

    /// Per-frame blank probability averaged under the alignment posterior.
    fn expected_blank(&self, v: usize) -> f64 {
        let log_p = self.lattice.log_prob();
        let labels = self.lattice.labels;
        let frames = self.lattice.frames;
        let mut total = 0.0;
        for t in 0..frames {
            for s in node_range(t, frames, labels) {
                let occ = (self.lattice.alpha(t, s) + self.lattice.beta(t, s) - log_p).exp();
                let n = t * (labels + 1) + s;
                total += occ * self.log_probs[n * v + BLANK].exp();
            }
        }
        total
    }
}

/// Encoder pass shared by every label sequence scored on one utterance, with
/// one lattice per sequence. Opaque outside the crate.
pub struct UtteranceGraph {
    enc: EncoderCache,
    ph: Matrix,
    pub(crate) seqs: Vec<SeqGraph>,
}

impl UtteranceGraph {
    /// Forward pass for each sequence of `space`; sequences with `S > T` get no graph
    /// and score negative infinity.
    pub(crate) fn forward(
        model: &TransducerParams,
        features: &Matrix,
        space: &[LabelSequence],
    ) -> Result<(Vec<f64>, Self)> {
        if features.cols() != model.config().input_dim {
            return Err(Error::Config(format!(
                "features have dimension {}, model expects {}",
                features.cols(),
                model.config().input_dim
            )));
        }
        if features.rows() == 0 {
            return Err(Error::EmptyInput("utterance has no frames".into()));
        }
        let enc = model.encode_cached(features);
        let ph = model.joint_project_encoder(&enc.out);
        let mut seqs = Vec::with_capacity(space.len());
        let mut scores = Vec::with_capacity(space.len());
        for target in space {
            model.vocab().check(target)?;
            if target.len() > features.rows() {
                scores.push(f64::NEG_INFINITY);
                // Placeholder graph with an empty lattice keeps indices aligned.
                seqs.push(SeqGraph {
                    target: target.clone(),
                    pred: model.predict_sequence(&[]),
                    hidden: Vec::new(),
                    log_probs: Vec::new(),
                    lattice: Lattice {
                        frames: 0,
                        labels: 0,
                        alpha: vec![f64::NEG_INFINITY],
                        beta: vec![f64::NEG_INFINITY],
                    },
                });
                continue;
            }
            let g = SeqGraph::forward(model, &ph, target);
            scores.push(g.lattice.log_prob());
            seqs.push(g);
        }
        Ok((scores, UtteranceGraph { enc, ph, seqs }))
    }

    /// `grad += Σ_i weights[i] · ∂ log P(space_i | X) / ∂θ`.
    pub(crate) fn backward(&self, model: &TransducerParams, weights: &[f64], grad: &mut [f64]) {
        let mut d_ph = Matrix::zeros(self.ph.rows(), self.ph.cols());
        for (g, w) in self.seqs.iter().zip(weights) {
            g.backward(model, *w, &mut d_ph, grad);
        }
        let d_enc = model.joint_encoder_backward(&self.enc.out, &d_ph, grad);
        model.backward_encoder(&self.enc, &d_enc, grad);
    }
}

/// `log P_RNNT(target | X)`, summing every alignment through the lattice.
pub fn seq_log_prob(model: &TransducerParams, features: &Matrix, target: &[Label]) -> Result<SeqLogProb> {
    if target.len() > features.rows() {
        model.vocab().check(target)?;
        return Ok(SeqLogProb::Unreachable);
    }
    let lat = Lattice::build(model, features, target)?;
    Ok(SeqLogProb::Reachable(LogProb::new(lat.log_prob())?))
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

/// Explicit enumeration of every alignment of `target`, summing step products
/// computed one frame at a time through `step_posterior`.
pub fn brute_force_seq_log_prob(model: &TransducerParams, features: &Matrix, target: &[Label]) -> Result<SeqLogProb> {
    model.vocab().check(target)?;
    let frames = features.rows();
    let labels = target.len();
    if labels > frames {
        return Ok(SeqLogProb::Unreachable);
    }
    let work = binomial(frames, labels) * frames as u128;
    if work > ORACLE_LIMIT {
        return Err(Error::OracleScale(format!("C({frames},{labels})·{frames} = {work} exceeds {ORACLE_LIMIT}")));
    }
    let enc = model.encode(features)?;
    // Context vectors for each history prefix, computed once.
    let mut contexts = Vec::with_capacity(labels + 1);
    let mut state = model.start_state();
    contexts.push(state.context().to_vec());
    for l in target {
        state = model.advance_state(&state, *l);
        contexts.push(state.context().to_vec());
    }
    let mut total = f64::NEG_INFINITY;
    let mut emit = vec![false; frames];
    enumerate_subsets(frames, labels, 0, &mut emit, &mut |emit| -> Result<()> {
        let mut s = 0;
        let mut lp = 0.0;
        for (t, e) in emit.iter().enumerate() {
            let post = model.step_posterior(enc.row(t), &contexts[s])?;
            if *e {
                lp += post[target[s].output_index()].ln();
                s += 1;
            } else {
                lp += post[BLANK].ln();
            }
        }
        total = log_add(total, lp);
        Ok(())
    })?;
    Ok(SeqLogProb::Reachable(LogProb::new(total)?))
}

fn enumerate_subsets<F>(n: usize, k: usize, start: usize, emit: &mut [bool], f: &mut F) -> Result<()>
where
    F: FnMut(&[bool]) -> Result<()>,
{
    if k == 0 {
        return f(emit);
    }
    for i in start..=n - k {
        emit[i] = true;
        enumerate_subsets(n, k - 1, i + 1, emit, f)?;
        emit[i] = false;
    }
    Ok(())
}

/// `P_RNNT(a | X)` for every label sequence of length `0..=min(max_len, T)`.
pub fn posterior_table(
    model: &TransducerParams,
    features: &Matrix,
    max_len: usize,
) -> Result<BTreeMap<LabelSequence, f64>> {
    let frames = features.rows();
    let size = (model.vocab().output_dim() as u128).checked_pow(frames as u32).unwrap_or(u128::MAX);
    if size > ORACLE_LIMIT {
        return Err(Error::OracleScale(format!("(|V|+1)^T = {size} exceeds {ORACLE_LIMIT}")));
    }
    let space = all_sequences(model.vocab().len(), max_len.min(frames));
    let (scores, _) = UtteranceGraph::forward(model, features, &space)?;
    Ok(space.into_iter().zip(scores).map(|(a, lp)| (a, lp.exp())).collect())
}

/// `−(1/M) Σ_m log P_RNNT(target_m | X_m)` and its gradient.
pub fn ce_loss_and_grad(model: &TransducerParams, batch: &[(&Matrix, &[Label])]) -> Result<LossResult> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    for (m, (features, target)) in batch.iter().enumerate() {
        if target.len() > features.rows() {
            return Err(Error::TrainingData(format!(
                "utterance {m}: target length {} exceeds {} frames",
                target.len(),
                features.rows()
            )));
        }
        let space = [target.to_vec()];
        let (scores, graph) = UtteranceGraph::forward(model, features, &space)?;
        loss -= scale * scores[0];
        graph.backward(model, &[-scale], &mut grad);
    }
    Ok(LossResult { loss, grad })
}

/// Mean over frames of the blank probability, weighted by the alignment
/// posterior of `target`.
pub fn expected_blank_probability(model: &TransducerParams, features: &Matrix, target: &[Label]) -> Result<f64> {
    if target.len() > features.rows() {
        return Err(Error::TrainingData("target longer than utterance".into()));
    }
    let (_, graph) = UtteranceGraph::forward(model, features, &[target.to_vec()])?;
    Ok(graph.seqs[0].expected_blank(model.vocab().output_dim()) / features.rows() as f64)
}
