//! Sequence discriminative training against a fixed language model.
//!
//! `P_seq(a | X) ∝ P_RNNT(a | X)^α · P_LM(a)^β`, normalized over a hypothesis
//! space. MMI maximizes `P_seq` of the reference; MBR minimizes the expected
//! risk under `P_seq`. Only the acoustic model receives gradients.

mod lfmmi;
mod nbest;
mod table;

pub use lfmmi::{exact_log_denominator, lf_mmi_log_denominator, lf_mmi_loss, LF_MMI_DEFAULT_TOP_K};
pub use nbest::{mbr_loss_nbest, mmi_loss_nbest, read_nbest, write_nbest, NBestEntry, NBestList};
pub use table::TableModel;

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::lattice::{LossResult, UtteranceGraph, ORACLE_LIMIT};
use crate::lm::SequenceScorer;
use crate::model::{all_sequences, count_sequences, length_then_lex, Label, LabelSequence, TransducerParams};
use crate::nn::Matrix;
use crate::numerics::log_sum_exp_unchecked;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeqScales {
    alpha: f64,
    beta: f64,
}

impl SeqScales {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `α·lp + β·lm` with `0 · (−∞)` read as 0.
    pub fn combine(&self, transducer: f64, lm: f64) -> f64 {
        let l = if self.beta == 0.0 { 0.0 } else { self.beta * lm };
        self.alpha * transducer + l
    }
}

/// Anything that scores label sequences given an input and can backpropagate
/// weighted sums of those log-probabilities.
pub trait SequenceModel {
    type Input;
    type Cache;

    fn vocab_size(&self) -> usize;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// `log P(a | input)` for every `a` in `space`.
    fn forward(&self, input: &Self::Input, space: &[LabelSequence]) -> Result<(Vec<f64>, Self::Cache)>;

    /// `grad += Σ_i weights[i] · ∂ log P(space_i | input) / ∂θ`.
    fn backward(&self, cache: &Self::Cache, weights: &[f64], grad: &mut [f64]);

    fn param_count(&self) -> usize {
        self.params().len()
    }
}

impl SequenceModel for TransducerParams {
    type Input = Matrix;
    type Cache = UtteranceGraph;

    fn vocab_size(&self) -> usize {
        self.vocab().len()
    }

    fn params(&self) -> &[f64] {
        self.as_slice()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.as_mut_slice()
    }

    fn forward(&self, input: &Matrix, space: &[LabelSequence]) -> Result<(Vec<f64>, UtteranceGraph)> {
        UtteranceGraph::forward(self, input, space)
    }

    fn backward(&self, cache: &UtteranceGraph, weights: &[f64], grad: &mut [f64]) {
        cache.backward(self, weights, grad);
    }
}

/// One utterance of an empirical distribution.
#[derive(Clone, Debug)]
pub struct EmpiricalUtterance<I> {
    pub input: I,
    /// `Pr(X)`.
    pub weight: f64,
    /// `Pr(a | X)` over its support.
    pub targets: Vec<(LabelSequence, f64)>,
}

#[derive(Clone, Debug)]
pub struct EmpiricalDistribution<I> {
    utterances: Vec<EmpiricalUtterance<I>>,
}

impl<I> EmpiricalDistribution<I> {
    pub fn new(utterances: Vec<EmpiricalUtterance<I>>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Contract("empirical distribution has no utterances".into()));
        }
        let total: f64 = utterances.iter().map(|u| u.weight).sum();
        if utterances.iter().any(|u| !(u.weight >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!("utterance weights must be non-negative and sum to 1, got {total}")));
        }
        for (m, u) in utterances.iter().enumerate() {
            let mass: f64 = u.targets.iter().map(|(_, p)| p).sum();
            if u.targets.is_empty() || u.targets.iter().any(|(_, p)| !(*p >= 0.0)) || (mass - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "utterance {m}: target weights must be non-negative and sum to 1"
                )));
            }
            let mut seen: Vec<&LabelSequence> = u.targets.iter().map(|(a, _)| a).collect();
            seen.sort();
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Contract(format!("utterance {m}: duplicate target sequence")));
            }
        }
        Ok(Self { utterances })
    }

    /// Uniform `Pr(X)` with one transcript per utterance.
    pub fn from_pairs(pairs: Vec<(I, LabelSequence)>) -> Result<Self> {
        let w = 1.0 / pairs.len().max(1) as f64;
        Self::new(
            pairs
                .into_iter()
                .map(|(input, a)| EmpiricalUtterance { input, weight: w, targets: vec![(a, 1.0)] })
                .collect(),
        )
    }

    pub fn utterances(&self) -> &[EmpiricalUtterance<I>] {
        &self.utterances
    }
}

fn check_space(space: &[LabelSequence]) -> Result<()> {
    if space.is_empty() {
        return Err(Error::Contract("hypothesis space is empty".into()));
    }
    let mut sorted: Vec<&LabelSequence> = space.iter().collect();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Contract("hypothesis space has duplicates".into()));
    }
    Ok(())
}

/// Normalizes combined scores; returns `(P_seq, log Z)`.
pub(crate) fn normalize(combined: &[f64]) -> Result<(Vec<f64>, f64)> {
    let log_z = log_sum_exp_unchecked(combined);
    if log_z == f64::NEG_INFINITY {
        return Err(Error::DegenerateSpace);
    }
    Ok((combined.iter().map(|c| (c - log_z).exp()).collect(), log_z))
}

/// `P_seq` over `space` for one input.
pub fn p_seq<M: SequenceModel>(
    model: &M,
    input: &M::Input,
    lm: &dyn SequenceScorer,
    scales: SeqScales,
    space: &[LabelSequence],
) -> Result<Vec<f64>> {
    check_space(space)?;
    let (lp, _) = model.forward(input, space)?;
    let combined =
        space.iter().zip(&lp).map(|(a, t)| Ok(scales.combine(*t, lm.score(a)?))).collect::<Result<Vec<_>>>()?;
    Ok(normalize(&combined)?.0)
}

fn full_space(vocab_size: usize, max_len: usize) -> Result<Vec<LabelSequence>> {
    let n = count_sequences(vocab_size, max_len);
    if n > ORACLE_LIMIT {
        return Err(Error::OracleScale(format!("{n} sequences of length ≤ {max_len} exceed {ORACLE_LIMIT}")));
    }
    Ok(all_sequences(vocab_size, max_len))
}

/// Exact expected-criterion machinery: for each utterance, the combined
/// distribution over the full space and the indices of its targets.
fn exact_criterion<M, F>(
    model: &M,
    lm: &dyn SequenceScorer,
    scales: SeqScales,
    empirical: &EmpiricalDistribution<M::Input>,
    max_len: usize,
    mut per_utterance: F,
) -> Result<LossResult>
where
    M: SequenceModel,
    F: FnMut(&[LabelSequence], &[f64], &[f64], f64, &[(usize, f64)], &mut Vec<f64>) -> Result<f64>,
{
    let space = full_space(model.vocab_size(), max_len)?;
    let index: HashMap<&LabelSequence, usize> = space.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let lm_scores = space.iter().map(|a| lm.score(a)).collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    let mut weights = vec![0.0; space.len()];
    for (m, u) in empirical.utterances().iter().enumerate() {
        let targets = u
            .targets
            .iter()
            .map(|(a, p)| {
                index.get(a).map(|i| (*i, *p)).ok_or_else(|| {
                    Error::Contract(format!("utterance {m}: target of length {} exceeds max_len {max_len}", a.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (lp, cache) = model.forward(&u.input, &space)?;
        let combined: Vec<f64> = lp.iter().zip(&lm_scores).map(|(t, l)| scales.combine(*t, *l)).collect();
        let (q, log_z) = normalize(&combined)?;
        weights.iter_mut().for_each(|w| *w = 0.0);
        let l = per_utterance(&space, &combined, &q, log_z, &targets, &mut weights)?;
        if !l.is_finite() {
            return Err(Error::TrainingData(format!("utterance {m}: a target has zero probability")));
        }
        loss += u.weight * l;
        weights.iter_mut().for_each(|w| *w *= u.weight * scales.alpha);
        model.backward(&cache, &weights, &mut grad);
    }
    Ok(LossResult { loss, grad })
}

/// `−Σ_X Pr(X) Σ_a Pr(a|X) log P_seq(a | X)` with the full space of length ≤ `max_len`.
pub fn mmi_loss_exact<M: SequenceModel>(
    model: &M,
    lm: &dyn SequenceScorer,
    scales: SeqScales,
    empirical: &EmpiricalDistribution<M::Input>,
    max_len: usize,
) -> Result<LossResult> {
    exact_criterion(model, lm, scales, empirical, max_len, |_, combined, q, log_z, targets, w| {
        // ∂/∂ log P_b = α (q_b − Pr(b|X)).
        w.copy_from_slice(q);
        let mut loss = 0.0;
        for (i, p) in targets {
            if *p > 0.0 {
                loss -= p * (combined[*i] - log_z);
            }
            w[*i] -= p;
        }
        Ok(loss)
    })
}

/// `Σ_X Pr(X) Σ_h P_seq(h | X) Σ_a Pr(a|X) R(h, a)` with the full space.
pub fn mbr_loss_exact<M, R>(
    model: &M,
    lm: &dyn SequenceScorer,
    scales: SeqScales,
    empirical: &EmpiricalDistribution<M::Input>,
    max_len: usize,
    risk: R,
) -> Result<LossResult>
where
    M: SequenceModel,
    R: Fn(&[Label], &[Label]) -> f64,
{
    exact_criterion(model, lm, scales, empirical, max_len, |space, _, q, _, targets, w| {
        let expected: Vec<f64> =
            space.iter().map(|h| targets.iter().map(|(i, p)| p * risk(h, &space[*i])).sum()).collect();
        Ok(risk_weights(q, &expected, w))
    })
}

/// Fills `w_h = q_h (R_h − R̄)` and returns `R̄ = Σ q_h R_h`.
pub(crate) fn risk_weights(q: &[f64], risks: &[f64], w: &mut [f64]) -> f64 {
    let mean: f64 = q.iter().zip(risks).map(|(a, b)| if *a == 0.0 { 0.0 } else { a * b }).sum();
    for ((wi, qi), ri) in w.iter_mut().zip(q).zip(risks) {
        *wi = if *qi == 0.0 { 0.0 } else { qi * (ri - mean) };
    }
    mean
}

/// `target(a) ∝ (Pr(a|X) / P_LM(a)^β)^{1/α}` over the support of `Pr`.
pub fn mmi_optimum_target(
    empirical: &[(LabelSequence, f64)],
    lm: &dyn SequenceScorer,
    scales: SeqScales,
) -> Result<BTreeMap<LabelSequence, f64>> {
    let mut logs = Vec::new();
    for (a, p) in empirical {
        if *p <= 0.0 {
            continue;
        }
        let l = lm.score(a)?;
        if scales.beta > 0.0 && l == f64::NEG_INFINITY {
            return Err(Error::Singularity(format!("LM assigns zero probability to a sequence of length {}", a.len())));
        }
        logs.push((a.clone(), (p.ln() - scales.combine(0.0, l)) / scales.alpha));
    }
    if logs.is_empty() {
        return Err(Error::Contract("empirical distribution has empty support".into()));
    }
    let values: Vec<f64> = logs.iter().map(|(_, v)| *v).collect();
    let (q, _) = normalize(&values)?;
    Ok(logs.into_iter().map(|(a, _)| a).zip(q).collect())
}

/// The candidate with the lowest expected risk; ties (within 1e-12 relative)
/// go to the shorter, then lexicographically smaller sequence.
pub fn bayes_optimal_sequence<R>(
    empirical: &[(LabelSequence, f64)],
    risk: R,
    candidates: &[LabelSequence],
) -> Result<LabelSequence>
where
    R: Fn(&[Label], &[Label]) -> f64,
{
    let mut best: Option<(&LabelSequence, f64)> = None;
    for c in candidates {
        let r: f64 = empirical.iter().map(|(a, p)| p * risk(c, a)).sum();
        let better = match best {
            None => true,
            Some((b, br)) => {
                let tol = 1e-12 * br.abs().max(1.0);
                r < br - tol || ((r - br).abs() <= tol && length_then_lex(c, b).is_lt())
            }
        };
        if better {
            best = Some((c, r));
        }
    }
    best.map(|(c, _)| c.clone()).ok_or_else(|| Error::Contract("no candidate sequences".into()))
}

/// `½ Σ |p − q|` over the union of supports.
pub fn total_variation(p: &BTreeMap<LabelSequence, f64>, q: &BTreeMap<LabelSequence, f64>) -> f64 {
    let mut total = 0.0;
    for (a, x) in p {
        total += (x - q.get(a).copied().unwrap_or(0.0)).abs();
    }
    for (a, y) in q {
        if !p.contains_key(a) {
            total += y.abs();
        }
    }
    0.5 * total
}

/// Fixed-step gradient descent; returns the loss before every step.
pub fn gradient_descent<F>(params: &mut [f64], steps: usize, step_size: f64, mut loss_fn: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<LossResult>,
{
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let LossResult { loss, grad } = loss_fn(params)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Training(format!("loss became {loss} at step {step}")));
        }
        trace.push(loss);
        for (w, g) in params.iter_mut().zip(&grad) {
            *w -= step_size * g;
        }
    }
    Ok(trace)
}
