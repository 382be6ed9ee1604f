//! The strictly monotonic transducer: windowed feed-forward encoder,
//! context-1 or recurrent prediction network, and a concatenating joint
//! network whose softmax covers blank plus every label.

mod checkpoint;
mod params;
mod vocab;

pub use checkpoint::{read_container, write_container, Container};
pub use params::{ModelConfig, ParamBlock, Part, PredictorKind, TransducerParams};
pub use vocab::{
    all_sequences, collapse, count_sequences, length_then_lex, AlignmentSequence, Label, LabelSequence, Symbol,
    Vocabulary, BLANK,
};

use crate::error::{Error, Result};
use crate::nn::{tanh_backward, tanh_in_place, CellStep, Matrix};
use crate::numerics::{log_softmax_into, softmax_in_place};
use params::PredNet;

/// Prediction-network state after consuming some label history.
#[derive(Clone, Debug, PartialEq)]
pub struct PredState {
    out: Vec<f64>,
    cell: Option<Vec<f64>>,
}

impl PredState {
    /// The context vector fed to the joint network.
    pub fn context(&self) -> &[f64] {
        &self.out
    }
}

/// Forward values of the encoder for one utterance.
#[derive(Clone, Debug)]
pub(crate) struct EncoderCache {
    windows: Matrix,
    hidden: Matrix,
    pub out: Matrix,
}

/// Forward values of the prediction network over a chain of embedding rows.
#[derive(Clone, Debug)]
pub(crate) struct PredictionCache {
    rows: Vec<usize>,
    hidden: Option<Matrix>,
    steps: Vec<CellStep>,
    pub out: Matrix,
}

impl TransducerParams {
    pub(crate) fn sos_row(&self) -> usize {
        self.config.vocab.len()
    }

    fn embedding(&self, row: usize) -> &[f64] {
        let d = self.config.embed_dim;
        let off = self.layout.embed + row * d;
        &self.data[off..off + d]
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.config.input_dim {
            return Err(Error::Config(format!(
                "features have dimension {}, model expects {}",
                features.cols(),
                self.config.input_dim
            )));
        }
        if features.rows() == 0 {
            return Err(Error::EmptyInput("utterance has no frames".into()));
        }
        Ok(())
    }

    /// Maps features `T × D` to encoder outputs `T × E`.
    pub fn encode(&self, features: &Matrix) -> Result<Matrix> {
        self.check_features(features)?;
        Ok(self.encode_cached(features).out)
    }

    pub(crate) fn encode_cached(&self, features: &Matrix) -> EncoderCache {
        let c = &self.config;
        let t_len = features.rows();
        let w = c.window as isize;
        let mut windows = Matrix::zeros(t_len, c.window_width());
        for t in 0..t_len {
            let row = windows.row_mut(t);
            for (k, off) in (-w..=w).enumerate() {
                let src = t as isize + off;
                if src >= 0 && (src as usize) < t_len {
                    row[k * c.input_dim..(k + 1) * c.input_dim].copy_from_slice(features.row(src as usize));
                }
            }
        }
        let mut hidden = Matrix::zeros(t_len, c.encoder_hidden);
        let mut out = Matrix::zeros(t_len, c.encoder_dim);
        for t in 0..t_len {
            self.layout.enc1.forward(&self.data, windows.row(t), hidden.row_mut(t));
            tanh_in_place(hidden.row_mut(t));
            self.layout.enc2.forward(&self.data, hidden.row(t), out.row_mut(t));
            tanh_in_place(out.row_mut(t));
        }
        EncoderCache { windows, hidden, out }
    }

    /// Accumulates parameter gradients given `d_out` w.r.t. the encoder output.
    pub(crate) fn backward_encoder(&self, cache: &EncoderCache, d_out: &Matrix, grad: &mut [f64]) {
        let c = &self.config;
        let mut d2 = vec![0.0; c.encoder_dim];
        let mut d1 = vec![0.0; c.encoder_hidden];
        for t in 0..d_out.rows() {
            let dy = d_out.row(t);
            if dy.iter().all(|v| *v == 0.0) {
                continue;
            }
            d2.copy_from_slice(dy);
            tanh_backward(cache.out.row(t), &mut d2);
            d1.iter_mut().for_each(|v| *v = 0.0);
            self.layout.enc2.backward(&self.data, cache.hidden.row(t), &d2, grad, Some(&mut d1));
            tanh_backward(cache.hidden.row(t), &mut d1);
            self.layout.enc1.backward(&self.data, cache.windows.row(t), &d1, grad, None);
        }
    }

    /// State for the empty history (learned start-of-sequence embedding).
    pub fn start_state(&self) -> PredState {
        self.state_from_row(self.sos_row(), None)
    }

    /// State after appending `label` to the history summarized by `state`.
    pub fn advance_state(&self, state: &PredState, label: Label) -> PredState {
        self.state_from_row(label.index(), Some(state))
    }

    fn state_from_row(&self, row: usize, prev: Option<&PredState>) -> PredState {
        let x = self.embedding(row);
        match &self.layout.pred {
            PredNet::ContextOne { l1, l2 } => {
                let mut h = vec![0.0; l1.n_out];
                l1.forward(&self.data, x, &mut h);
                tanh_in_place(&mut h);
                let mut out = vec![0.0; l2.n_out];
                l2.forward(&self.data, &h, &mut out);
                tanh_in_place(&mut out);
                PredState { out, cell: None }
            }
            PredNet::Recurrent(cell) => {
                let prev_step = prev.map(|s| match &s.cell {
                    None => CellStep::Elman { h: s.out.clone() },
                    Some(c) => CellStep::Lstm { gates: Vec::new(), c: c.clone(), tc: Vec::new(), h: s.out.clone() },
                });
                // The start state has no predecessor: its recurrent input is zero.
                match cell.step(&self.data, x, prev_step.as_ref()) {
                    CellStep::Elman { h } => PredState { out: h, cell: None },
                    CellStep::Lstm { c, h, .. } => PredState { out: h, cell: Some(c) },
                }
            }
        }
    }

    /// Context vector for a label history.
    pub fn predict_context(&self, history: &[Label]) -> Result<Vec<f64>> {
        self.config.vocab.check(history)?;
        let mut state = self.start_state();
        let relevant = match self.config.context_size() {
            Some(k) => &history[history.len().saturating_sub(k)..],
            None => history,
        };
        for l in relevant {
            state = self.advance_state(&state, *l);
        }
        Ok(state.out)
    }

    /// Prediction outputs `g_0 … g_S` for the history prefixes of `labels`.
    pub(crate) fn predict_sequence(&self, labels: &[Label]) -> PredictionCache {
        let mut rows = Vec::with_capacity(labels.len() + 1);
        rows.push(self.sos_row());
        rows.extend(labels.iter().map(|l| l.index()));
        self.predict_rows(rows)
    }

    /// Outputs for one context per entry of `rows`: `[SOS, 0, 1, …]` enumerates every
    /// context-1 state. For recurrent predictors the rows form a single chain.
    pub(crate) fn predict_rows(&self, rows: Vec<usize>) -> PredictionCache {
        let p = self.config.predictor_dim;
        let mut out = Matrix::zeros(rows.len(), p);
        match &self.layout.pred {
            PredNet::ContextOne { l1, l2 } => {
                let mut hidden = Matrix::zeros(rows.len(), l1.n_out);
                for (i, r) in rows.iter().enumerate() {
                    l1.forward(&self.data, self.embedding(*r), hidden.row_mut(i));
                    tanh_in_place(hidden.row_mut(i));
                    l2.forward(&self.data, hidden.row(i), out.row_mut(i));
                    tanh_in_place(out.row_mut(i));
                }
                PredictionCache { rows, hidden: Some(hidden), steps: Vec::new(), out }
            }
            PredNet::Recurrent(cell) => {
                let mut steps: Vec<CellStep> = Vec::with_capacity(rows.len());
                for (i, r) in rows.iter().enumerate() {
                    let s = cell.step(&self.data, self.embedding(*r), steps.last());
                    out.row_mut(i).copy_from_slice(s.output());
                    steps.push(s);
                }
                PredictionCache { rows, hidden: None, steps, out }
            }
        }
    }

    pub(crate) fn backward_prediction(&self, cache: &PredictionCache, d_out: &Matrix, grad: &mut [f64]) {
        let e = self.config.embed_dim;
        let mut d_emb = vec![0.0; e];
        match &self.layout.pred {
            PredNet::ContextOne { l1, l2 } => {
                let hidden = cache.hidden.as_ref().expect("context-1 cache has hidden rows");
                let mut d2 = vec![0.0; l2.n_out];
                let mut d1 = vec![0.0; l1.n_out];
                for (i, r) in cache.rows.iter().enumerate() {
                    let dy = d_out.row(i);
                    if dy.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    d2.copy_from_slice(dy);
                    tanh_backward(cache.out.row(i), &mut d2);
                    d1.iter_mut().for_each(|v| *v = 0.0);
                    l2.backward(&self.data, hidden.row(i), &d2, grad, Some(&mut d1));
                    tanh_backward(hidden.row(i), &mut d1);
                    d_emb.iter_mut().for_each(|v| *v = 0.0);
                    l1.backward(&self.data, self.embedding(*r), &d1, grad, Some(&mut d_emb));
                    self.add_embedding_grad(*r, &d_emb, grad);
                }
            }
            PredNet::Recurrent(cell) => {
                let n = cell.hidden;
                let mut dh_next = vec![0.0; n];
                let mut dc_next: Option<Vec<f64>> = None;
                for i in (0..cache.rows.len()).rev() {
                    let mut dh = d_out.row(i).to_vec();
                    for (a, b) in dh.iter_mut().zip(&dh_next) {
                        *a += b;
                    }
                    let prev = if i > 0 { Some(&cache.steps[i - 1]) } else { None };
                    d_emb.iter_mut().for_each(|v| *v = 0.0);
                    let (dhp, dcp) = cell.backward_step(
                        &self.data,
                        self.embedding(cache.rows[i]),
                        prev,
                        &cache.steps[i],
                        &dh,
                        dc_next.as_deref(),
                        grad,
                        &mut d_emb,
                    );
                    self.add_embedding_grad(cache.rows[i], &d_emb, grad);
                    dh_next = dhp;
                    dc_next = dcp;
                }
            }
        }
    }

    fn add_embedding_grad(&self, row: usize, d: &[f64], grad: &mut [f64]) {
        let e = self.config.embed_dim;
        let off = self.layout.embed + row * e;
        for (g, v) in grad[off..off + e].iter_mut().zip(d) {
            *g += v;
        }
    }

    /// Encoder half of the joint hidden pre-activation (bias included), one row per frame.
    pub(crate) fn joint_project_encoder(&self, enc: &Matrix) -> Matrix {
        let jh = &self.layout.joint_hidden;
        let mut out = Matrix::zeros(enc.rows(), jh.n_out);
        for t in 0..enc.rows() {
            let row = out.row_mut(t);
            if let Some(b) = jh.b {
                row.copy_from_slice(&self.data[b..b + jh.n_out]);
            }
            jh.forward_columns(&self.data, 0, enc.row(t), row);
        }
        out
    }

    /// Prediction half of the joint hidden pre-activation, one row per context.
    pub(crate) fn joint_project_prediction(&self, pred: &Matrix) -> Matrix {
        let jh = &self.layout.joint_hidden;
        let e = self.config.encoder_dim;
        let mut out = Matrix::zeros(pred.rows(), jh.n_out);
        for s in 0..pred.rows() {
            jh.forward_columns(&self.data, e, pred.row(s), out.row_mut(s));
        }
        out
    }

    /// One joint evaluation: `hidden = tanh(ph + pg)`, `log_probs = log_softmax(W hidden + b)`.
    pub(crate) fn joint_node(&self, ph: &[f64], pg: &[f64], hidden: &mut [f64], log_probs: &mut [f64]) {
        for ((u, a), b) in hidden.iter_mut().zip(ph).zip(pg) {
            *u = (a + b).tanh();
        }
        let mut logits = vec![0.0; self.layout.joint_out.n_out];
        self.layout.joint_out.forward(&self.data, hidden, &mut logits);
        log_softmax_into(&logits, log_probs);
    }

    /// Backward through the output layer and tanh of one joint node.
    /// Adds the pre-activation gradient to `d_pre`.
    pub(crate) fn joint_node_backward(&self, hidden: &[f64], d_logits: &[f64], grad: &mut [f64], d_pre: &mut [f64]) {
        let mut du = vec![0.0; hidden.len()];
        self.layout.joint_out.backward(&self.data, hidden, d_logits, grad, Some(&mut du));
        tanh_backward(hidden, &mut du);
        for (a, b) in d_pre.iter_mut().zip(&du) {
            *a += b;
        }
    }

    /// Backward through the encoder half of the joint projection (bias included).
    /// Returns the gradient w.r.t. the encoder rows.
    pub(crate) fn joint_encoder_backward(&self, enc: &Matrix, d_ph: &Matrix, grad: &mut [f64]) -> Matrix {
        let jh = &self.layout.joint_hidden;
        let mut d_enc = Matrix::zeros(enc.rows(), enc.cols());
        for t in 0..enc.rows() {
            let dy = d_ph.row(t);
            jh.backward_columns(&self.data, 0, enc.row(t), dy, grad, Some(d_enc.row_mut(t)));
            if let Some(b) = jh.b {
                for (g, d) in grad[b..b + jh.n_out].iter_mut().zip(dy) {
                    *g += d;
                }
            }
        }
        d_enc
    }

    /// Backward through the prediction half of the joint projection.
    pub(crate) fn joint_prediction_backward(&self, pred: &Matrix, d_pg: &Matrix, grad: &mut [f64]) -> Matrix {
        let jh = &self.layout.joint_hidden;
        let e = self.config.encoder_dim;
        let mut d_pred = Matrix::zeros(pred.rows(), pred.cols());
        for s in 0..pred.rows() {
            jh.backward_columns(&self.data, e, pred.row(s), d_pg.row(s), grad, Some(d_pred.row_mut(s)));
        }
        d_pred
    }

    /// Distribution over `{ε} ∪ 𝒱` (blank at index 0) for encoder frame `h` and context `context`.
    pub fn step_posterior(&self, h: &[f64], context: &[f64]) -> Result<Vec<f64>> {
        let mut lp = self.step_log_posterior(h, context)?;
        softmax_in_place(&mut lp);
        Ok(lp)
    }

    pub fn step_log_posterior(&self, h: &[f64], context: &[f64]) -> Result<Vec<f64>> {
        let c = &self.config;
        if h.len() != c.encoder_dim || context.len() != c.predictor_dim {
            return Err(Error::Config(format!(
                "joint expects encoder dim {} and context dim {}, got {} and {}",
                c.encoder_dim,
                c.predictor_dim,
                h.len(),
                context.len()
            )));
        }
        let jh = &self.layout.joint_hidden;
        let mut ph = vec![0.0; jh.n_out];
        if let Some(b) = jh.b {
            ph.copy_from_slice(&self.data[b..b + jh.n_out]);
        }
        jh.forward_columns(&self.data, 0, h, &mut ph);
        let mut pg = vec![0.0; jh.n_out];
        jh.forward_columns(&self.data, c.encoder_dim, context, &mut pg);
        let mut hidden = vec![0.0; jh.n_out];
        let mut lp = vec![0.0; c.vocab.output_dim()];
        self.joint_node(&ph, &pg, &mut hidden, &mut lp);
        Ok(lp)
    }
}
