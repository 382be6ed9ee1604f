//! Internal language model estimates.
//!
//! Zero-encoder and mini-net estimates carry no EOS: their step distributions
//! cover labels only, and sequence scores are plain chain-rule sums over the
//! emitted labels.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lm::{check_labels, train_neural_lm, train_ngram, NeuralLmConfig, SequenceScorer, StepLogProbs};
use crate::model::{Label, LabelSequence, TransducerParams, Vocabulary};
use crate::nn::Matrix;
use crate::numerics::log_sum_exp_unchecked;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum IlmKind {
    ZeroEncoderRenorm,
    ZeroEncoderRaw,
    DensityRatio,
    MiniNet,
    Exact,
}

impl IlmKind {
    pub fn name(self) -> &'static str {
        match self {
            IlmKind::ZeroEncoderRenorm => "zero_encoder_renorm",
            IlmKind::ZeroEncoderRaw => "zero_encoder_raw",
            IlmKind::DensityRatio => "density_ratio",
            IlmKind::MiniNet => "mini_net",
            IlmKind::Exact => "exact",
        }
    }
}

/// Transducer label distribution with a fixed vector in place of the encoder output.
#[derive(Clone, Debug)]
pub struct ConstantEncoderIlm {
    model: TransducerParams,
    vector: Vec<f64>,
    renormalize: bool,
}

impl ConstantEncoderIlm {
    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    fn step(&self, context: &[f64]) -> StepLogProbs {
        let lp = self
            .model
            .step_log_posterior(&self.vector, context)
            .expect("vector and context dimensions are fixed by the model");
        let mut labels = lp[1..].to_vec();
        if self.renormalize {
            let z = log_sum_exp_unchecked(&labels);
            labels.iter_mut().for_each(|v| *v -= z);
        }
        StepLogProbs { labels, eos: None }
    }
}

impl SequenceScorer for ConstantEncoderIlm {
    fn vocab_size(&self) -> usize {
        self.model.vocab().len()
    }

    fn next_log_probs(&self, history: &[Label]) -> StepLogProbs {
        let mut state = self.model.start_state();
        for l in history {
            state = self.model.advance_state(&state, *l);
        }
        self.step(state.context())
    }

    fn models_eos(&self) -> bool {
        false
    }

    fn context_order(&self) -> Option<usize> {
        self.model.config().context_size().map(|k| k + 1)
    }

    fn score(&self, sequence: &[Label]) -> Result<f64> {
        self.model.vocab().check(sequence)?;
        let mut state = self.model.start_state();
        let mut total = 0.0;
        for l in sequence {
            total += self.step(state.context()).labels[l.index()];
            state = self.model.advance_state(&state, *l);
        }
        Ok(total)
    }
}

/// Sequence distribution given by an explicit table, with step probabilities
/// from prefix marginals.
#[derive(Clone, Debug, PartialEq)]
pub struct TableScorer {
    vocab_size: usize,
    table: BTreeMap<LabelSequence, f64>,
    prefix: BTreeMap<LabelSequence, f64>,
}

impl TableScorer {
    pub fn new(vocab_size: usize, table: BTreeMap<LabelSequence, f64>) -> Result<Self> {
        let mut prefix: BTreeMap<LabelSequence, f64> = BTreeMap::new();
        for (seq, p) in &table {
            check_labels(vocab_size, seq)?;
            if !(*p >= 0.0) || !p.is_finite() {
                return Err(Error::Contract(format!("table probability {p} is not a probability")));
            }
            for k in 0..=seq.len() {
                *prefix.entry(seq[..k].to_vec()).or_insert(0.0) += p;
            }
        }
        Ok(Self { vocab_size, table, prefix })
    }

    pub fn table(&self) -> &BTreeMap<LabelSequence, f64> {
        &self.table
    }

    pub fn total_mass(&self) -> f64 {
        self.table.values().sum()
    }

    /// `labels<TAB>log-probability` lines sorted by the label text.
    pub fn export(&self, vocab: &Vocabulary) -> Result<String> {
        let mut lines = Vec::with_capacity(self.table.len());
        for (seq, p) in &self.table {
            lines.push((vocab.format_sequence(seq)?, p.ln()));
        }
        lines.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = String::new();
        for (labels, lp) in lines {
            let _ = writeln!(out, "{labels}\t{lp}");
        }
        Ok(out)
    }
}

impl SequenceScorer for TableScorer {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_log_probs(&self, history: &[Label]) -> StepLogProbs {
        let mass = self.prefix.get(history).copied().unwrap_or(0.0);
        let mut ext = history.to_vec();
        let labels = (0..self.vocab_size)
            .map(|k| {
                ext.push(Label::new(k as u32));
                let m = self.prefix.get(&ext).copied().unwrap_or(0.0);
                ext.pop();
                m.ln() - mass.ln()
            })
            .collect();
        let own = self.table.get(history).copied().unwrap_or(0.0);
        StepLogProbs { labels, eos: Some(own.ln() - mass.ln()) }
    }

    fn score(&self, sequence: &[Label]) -> Result<f64> {
        check_labels(self.vocab_size, sequence)?;
        Ok(self.table.get(sequence).map_or(f64::NEG_INFINITY, |p| p.ln()))
    }
}

#[derive(Clone)]
enum Inner {
    ConstantEncoder(ConstantEncoderIlm),
    Table(TableScorer),
    Lm(Arc<dyn SequenceScorer>),
}

/// An ILM estimate tagged with how it was obtained.
#[derive(Clone)]
pub struct IlmEstimate {
    kind: IlmKind,
    inner: Inner,
}

impl std::fmt::Debug for IlmEstimate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IlmEstimate").field("kind", &self.kind).finish_non_exhaustive()
    }
}

impl IlmEstimate {
    pub fn kind(&self) -> IlmKind {
        self.kind
    }

    pub fn as_table(&self) -> Option<&TableScorer> {
        match &self.inner {
            Inner::Table(t) => Some(t),
            _ => None,
        }
    }

    pub fn as_constant_encoder(&self) -> Option<&ConstantEncoderIlm> {
        match &self.inner {
            Inner::ConstantEncoder(c) => Some(c),
            _ => None,
        }
    }

    fn scorer(&self) -> &dyn SequenceScorer {
        match &self.inner {
            Inner::ConstantEncoder(c) => c,
            Inner::Table(t) => t,
            Inner::Lm(l) => l.as_ref(),
        }
    }
}

impl SequenceScorer for IlmEstimate {
    fn vocab_size(&self) -> usize {
        self.scorer().vocab_size()
    }

    fn next_log_probs(&self, history: &[Label]) -> StepLogProbs {
        self.scorer().next_log_probs(history)
    }

    fn models_eos(&self) -> bool {
        self.scorer().models_eos()
    }

    fn context_order(&self) -> Option<usize> {
        self.scorer().context_order()
    }

    fn score(&self, sequence: &[Label]) -> Result<f64> {
        self.scorer().score(sequence)
    }
}

pub fn zero_encoder_ilm(model: &TransducerParams, renormalize: bool) -> IlmEstimate {
    let vector = vec![0.0; model.config().encoder_dim];
    let kind = if renormalize { IlmKind::ZeroEncoderRenorm } else { IlmKind::ZeroEncoderRaw };
    IlmEstimate {
        kind,
        inner: Inner::ConstantEncoder(ConstantEncoderIlm { model: model.clone(), vector, renormalize }),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DensityRatioConfig {
    NGram { order: usize, delta: f64 },
    Neural(NeuralLmConfig),
}

impl Default for DensityRatioConfig {
    fn default() -> Self {
        DensityRatioConfig::NGram { order: 2, delta: 0.1 }
    }
}

/// A standalone LM trained on the acoustic training transcripts.
pub fn density_ratio_ilm(
    transcripts: &[LabelSequence],
    vocab_size: usize,
    config: &DensityRatioConfig,
) -> Result<IlmEstimate> {
    if transcripts.is_empty() {
        return Err(Error::Training("density-ratio LM needs at least one transcript".into()));
    }
    let lm: Arc<dyn SequenceScorer> = match config {
        DensityRatioConfig::NGram { order, delta } => Arc::new(train_ngram(transcripts, vocab_size, *order, *delta)?),
        DensityRatioConfig::Neural(c) => Arc::new(train_neural_lm(transcripts, vocab_size, c)?),
    };
    Ok(IlmEstimate { kind: IlmKind::DensityRatio, inner: Inner::Lm(lm) })
}

/// Joint pre-activations of the prediction half for every label position of
/// every transcript, with the label emitted there.
struct MiniNetData {
    pg: Matrix,
    targets: Vec<usize>,
}

fn mini_net_data(model: &TransducerParams, transcripts: &[LabelSequence]) -> Result<MiniNetData> {
    if transcripts.is_empty() {
        return Err(Error::Training("mini-net ILM needs at least one transcript".into()));
    }
    let jh = model.config().joint_hidden;
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for seq in transcripts {
        model.vocab().check(seq)?;
        let cache = model.predict_sequence(seq);
        let pg = model.joint_project_prediction(&cache.out);
        for (s, l) in seq.iter().enumerate() {
            rows.extend_from_slice(pg.row(s));
            targets.push(l.output_index());
        }
    }
    if targets.is_empty() {
        return Err(Error::Training("transcripts contain no labels".into()));
    }
    Ok(MiniNetData { pg: Matrix::from_vec(targets.len(), jh, rows)?, targets })
}

fn mini_net_loss_and_grad(model: &TransducerParams, data: &MiniNetData, v: &[f64]) -> (f64, Vec<f64>) {
    let enc = Matrix::from_vec(1, v.len(), v.to_vec()).expect("one row");
    let ph = model.joint_project_encoder(&enc);
    let jh = model.config().joint_hidden;
    let k = model.vocab().output_dim();
    let n = data.targets.len() as f64;
    let mut scratch = vec![0.0; model.param_count()];
    let mut d_ph = Matrix::zeros(1, jh);
    let mut hidden = vec![0.0; jh];
    let mut lp = vec![0.0; k];
    let mut d_logits = vec![0.0; k];
    let mut loss = 0.0;
    for (i, &target) in data.targets.iter().enumerate() {
        model.joint_node(ph.row(0), data.pg.row(i), &mut hidden, &mut lp);
        let z = log_sum_exp_unchecked(&lp[1..]);
        loss -= (lp[target] - z) / n;
        d_logits[0] = 0.0;
        for j in 1..k {
            d_logits[j] = (lp[j] - z).exp() / n;
        }
        d_logits[target] -= 1.0 / n;
        model.joint_node_backward(&hidden, &d_logits, &mut scratch, d_ph.row_mut(0));
    }
    let d_enc = model.joint_encoder_backward(&enc, &d_ph, &mut scratch);
    (loss, d_enc.row(0).to_vec())
}

/// Fits the constant encoder vector by fixed-step gradient descent; returns the
/// vector and the loss before every step plus the final loss.
pub fn train_mini_net(
    model: &TransducerParams,
    transcripts: &[LabelSequence],
    steps: usize,
    step_size: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let data = mini_net_data(model, transcripts)?;
    let mut v = vec![0.0; model.config().encoder_dim];
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..=steps {
        let (loss, grad) = mini_net_loss_and_grad(model, &data, &v);
        if !loss.is_finite() {
            return Err(Error::Training(format!("mini-net loss became {loss} at step {step}")));
        }
        losses.push(loss);
        if step < steps {
            for (w, g) in v.iter_mut().zip(&grad) {
                *w -= step_size * g;
            }
        }
    }
    Ok((v, losses))
}

pub fn mini_net_ilm(
    model: &TransducerParams,
    transcripts: &[LabelSequence],
    steps: usize,
    step_size: f64,
) -> Result<IlmEstimate> {
    let (vector, _) = train_mini_net(model, transcripts, steps, step_size)?;
    Ok(IlmEstimate {
        kind: IlmKind::MiniNet,
        inner: Inner::ConstantEncoder(ConstantEncoderIlm { model: model.clone(), vector, renormalize: true }),
    })
}

/// Mean label cross-entropy of the renormalized constant-encoder distribution
/// and its gradient w.r.t. the vector.
pub fn mini_net_objective(
    model: &TransducerParams,
    transcripts: &[LabelSequence],
    v: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if v.len() != model.config().encoder_dim {
        return Err(Error::Config("vector must have the encoder dimension".into()));
    }
    let data = mini_net_data(model, transcripts)?;
    Ok(mini_net_loss_and_grad(model, &data, v))
}

/// `P_ILM(a) = Σ_m w_m P_RNNT(a | X_m)` by enumeration.
pub fn exact_ilm(model: &TransducerParams, dataset: &[(&Matrix, f64)], max_len: usize) -> Result<IlmEstimate> {
    if dataset.is_empty() {
        return Err(Error::Contract("exact ILM needs at least one utterance".into()));
    }
    let total: f64 = dataset.iter().map(|(_, w)| w).sum();
    if dataset.iter().any(|(_, w)| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("utterance weights must be non-negative and sum to 1, got {total}")));
    }
    let mut table: BTreeMap<LabelSequence, f64> = BTreeMap::new();
    for (features, w) in dataset {
        for (seq, p) in crate::lattice::posterior_table(model, features, max_len)? {
            *table.entry(seq).or_insert(0.0) += w * p;
        }
    }
    Ok(IlmEstimate { kind: IlmKind::Exact, inner: Inner::Table(TableScorer::new(model.vocab().len(), table)?) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::posterior_table;
    use crate::lm::{perplexity, train_ngram};
    use crate::model::{all_sequences, ModelConfig, PredictorKind};
    use crate::numerics::check_gradient;

    fn micro(kind: PredictorKind, vocab: usize, seed: u64) -> TransducerParams {
        let mut c = ModelConfig::new(Vocabulary::with_size(vocab).unwrap(), 2);
        c.predictor = kind;
        c.encoder_hidden = 3;
        c.encoder_dim = 3;
        c.embed_dim = 2;
        c.predictor_dim = 3;
        c.joint_hidden = 4;
        TransducerParams::new(c, seed, 0.8).unwrap()
    }

    fn feats(t: usize, seed: u64) -> Matrix {
        Matrix::from_vec(t, 2, (0..2 * t).map(|i| ((i as f64 + 1.0) * (seed as f64 + 0.37)).sin()).collect()).unwrap()
    }

    fn l(i: u32) -> Label {
        Label::new(i)
    }

    fn transcripts() -> Vec<LabelSequence> {
        vec![vec![l(0), l(1)], vec![l(1), l(1), l(2)], vec![l(2)], vec![l(0), l(2), l(0)]]
    }

    #[test]
    fn renormalized_steps_sum_to_one() {
        for seed in 0..100 {
            let kind = [PredictorKind::ContextOne, PredictorKind::Elman, PredictorKind::Lstm][seed as usize % 3];
            let m = micro(kind, 3, seed);
            let ilm = zero_encoder_ilm(&m, true);
            for h in all_sequences(3, 2) {
                let s = ilm.next_log_probs(&h);
                assert!(s.eos.is_none());
                let total: f64 = s.labels.iter().map(|v| v.exp()).sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn raw_perplexity_dominates_renormalized() {
        for seed in 0..20 {
            let m = micro(PredictorKind::Elman, 3, seed);
            let raw = perplexity(&zero_encoder_ilm(&m, false), &transcripts()).unwrap().value();
            let ren = perplexity(&zero_encoder_ilm(&m, true), &transcripts()).unwrap().value();
            assert!(raw >= ren, "{raw} < {ren}");
        }
    }

    #[test]
    fn zero_encoder_matches_step_posterior() {
        let m = micro(PredictorKind::Lstm, 3, 4);
        let ilm = zero_encoder_ilm(&m, false);
        let seq = [l(2), l(0), l(1)];
        let mut expect = 0.0;
        for s in 0..seq.len() {
            let ctx = m.predict_context(&seq[..s]).unwrap();
            expect += m.step_posterior(&[0.0; 3], &ctx).unwrap()[seq[s].output_index()].ln();
        }
        assert!((ilm.score(&seq).unwrap() - expect).abs() < 1e-12);
        let mut chain = 0.0;
        for s in 0..seq.len() {
            chain += ilm.next_log_probs(&seq[..s]).labels[seq[s].index()];
        }
        assert!((chain - expect).abs() < 1e-12);
    }

    #[test]
    fn renorm_equals_raw_when_blank_is_impossible() {
        let mut m = micro(PredictorKind::Elman, 3, 8);
        m.block_mut("joint.output.bias").unwrap()[0] = -1e4;
        let a = zero_encoder_ilm(&m, true).score(&[l(0), l(2)]).unwrap();
        let b = zero_encoder_ilm(&m, false).score(&[l(0), l(2)]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn density_ratio_is_a_plain_ngram() {
        let t = transcripts();
        let dr = density_ratio_ilm(&t, 3, &DensityRatioConfig::default()).unwrap();
        let lm = train_ngram(&t, 3, 2, 0.1).unwrap();
        for s in &t {
            assert_eq!(dr.score(s).unwrap().to_bits(), lm.score(s).unwrap().to_bits());
        }
        assert!(matches!(density_ratio_ilm(&[], 3, &DensityRatioConfig::default()), Err(Error::Training(_))));
        let single = vec![vec![l(1), l(2)]];
        let dr = density_ratio_ilm(&single, 3, &DensityRatioConfig::default()).unwrap();
        let best = all_sequences(3, 3)
            .into_iter()
            .max_by(|a, b| dr.score(a).unwrap().total_cmp(&dr.score(b).unwrap()))
            .unwrap();
        assert_eq!(best, single[0]);
    }

    #[test]
    fn mini_net_gradient_and_descent() {
        let m = micro(PredictorKind::Elman, 3, 11);
        let t = transcripts();
        let v0 = vec![0.3, -0.2, 0.5];
        let (_, g) = mini_net_objective(&m, &t, &v0).unwrap();
        let report = check_gradient(|v: &[f64]| mini_net_objective(&m, &t, v).unwrap().0, &v0, g, 1e-6).unwrap();
        assert!(report.max_relative_error < 1e-6, "{report:?}");

        let (_, losses) = train_mini_net(&m, &t, 200, 1e-3).unwrap();
        assert!(losses.windows(2).all(|w| w[1] <= w[0] + 1e-15));

        let zero = zero_encoder_ilm(&m, true);
        let untrained = mini_net_ilm(&m, &t, 0, 0.5).unwrap();
        for s in &t {
            assert_eq!(untrained.score(s).unwrap(), zero.score(s).unwrap());
        }
        let trained = mini_net_ilm(&m, &t, 300, 0.5).unwrap();
        assert!(perplexity(&trained, &t).unwrap().value() <= perplexity(&zero, &t).unwrap().value());
    }

    #[test]
    fn exact_ilm_is_the_weighted_posterior_mixture() {
        let m = micro(PredictorKind::Elman, 2, 5);
        let xs: Vec<Matrix> = (0..8).map(|i| feats(4, i)).collect();
        let w: Vec<f64> = (1..=8).map(|i| i as f64 / 36.0).collect();
        let data: Vec<(&Matrix, f64)> = xs.iter().zip(&w).map(|(x, w)| (x, *w)).collect();
        let ilm = exact_ilm(&m, &data, 4).unwrap();
        let table = ilm.as_table().unwrap();
        assert!((table.total_mass() - 1.0).abs() < 1e-9);
        let tables: Vec<_> = xs.iter().map(|x| posterior_table(&m, x, 4).unwrap()).collect();
        for a in all_sequences(2, 4) {
            let direct: f64 = tables.iter().zip(&w).map(|(t, w)| w * t[&a]).sum();
            assert!((table.table()[&a] - direct).abs() < 1e-12);
            let lp = ilm.score(&a).unwrap();
            let mut chain = 0.0;
            for s in 0..a.len() {
                chain += ilm.next_log_probs(&a[..s]).labels[a[s].index()];
            }
            chain += ilm.next_log_probs(&a).eos.unwrap();
            assert!((lp - chain).abs() < 1e-9);
        }

        let one = exact_ilm(&m, &[(&xs[0], 1.0)], 4).unwrap();
        assert_eq!(one.as_table().unwrap().table(), &tables[0]);
        let two = exact_ilm(&m, &[(&xs[0], 0.5), (&xs[0], 0.5)], 4).unwrap();
        for (a, p) in two.as_table().unwrap().table() {
            assert!((p - tables[0][a]).abs() < 1e-15);
        }
        assert!(exact_ilm(&m, &[(&xs[0], 0.7)], 4).is_err());
    }

    #[test]
    fn exact_ilm_enforces_guard_and_exports_sorted() {
        let m = micro(PredictorKind::Elman, 2, 5);
        let x = feats(30, 1);
        assert!(matches!(exact_ilm(&m, &[(&x, 1.0)], 3), Err(Error::OracleScale(_))));
        let x = feats(2, 1);
        let ilm = exact_ilm(&m, &[(&x, 1.0)], 2).unwrap();
        let text = ilm.as_table().unwrap().export(m.vocab()).unwrap();
        let keys: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
        assert_eq!(keys, vec!["", "a", "a a", "a b", "b", "b a", "b b"]);
    }
}
