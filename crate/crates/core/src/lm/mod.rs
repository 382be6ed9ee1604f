//! Language models over label sequences and perplexity.
//!
//! A [`SequenceScorer`] is anything that assigns a log-probability to a label
//! sequence via the chain rule: external LMs, density-ratio and zero-encoder
//! ILMs, and exact marginal ILM tables all share this interface.

mod neural;
mod ngram;
mod text;

pub use neural::{train_neural_lm, NeuralLm, NeuralLmConfig};
pub use ngram::{train_ngram, NGramCounts, NGramLm};
pub use text::{read_corpus, write_corpus};

use crate::error::{Error, Result};
use crate::model::{Label, LabelSequence};
use crate::numerics::LogProb;

/// Next-token log-probabilities given a history.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLogProbs {
    /// One entry per label of 𝒱.
    pub labels: Vec<f64>,
    /// End-of-sequence log-probability; `None` when the scorer has no EOS.
    pub eos: Option<f64>,
}

pub trait SequenceScorer: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn next_log_probs(&self, history: &[Label]) -> StepLogProbs;

    /// Whether sequence scores include an EOS factor.
    fn models_eos(&self) -> bool {
        true
    }

    /// Markov order of the context (`Some(2)` for a bigram); `None` is unbounded.
    fn context_order(&self) -> Option<usize> {
        None
    }

    /// `Σ_s log P(a_s | a_<s) + log P(EOS | a)`.
    fn score(&self, sequence: &[Label]) -> Result<f64> {
        check_labels(self.vocab_size(), sequence)?;
        let mut total = 0.0;
        for s in 0..sequence.len() {
            total += self.next_log_probs(&sequence[..s]).labels[sequence[s].index()];
        }
        if let Some(eos) = self.next_log_probs(sequence).eos {
            total += eos;
        }
        Ok(total)
    }
}

pub(crate) fn check_labels(vocab_size: usize, sequence: &[Label]) -> Result<()> {
    match sequence.iter().find(|l| l.index() >= vocab_size) {
        Some(l) => Err(Error::Vocabulary(format!("label id {} outside vocabulary of size {vocab_size}", l.id()))),
        None => Ok(()),
    }
}

pub fn lm_log_prob(scorer: &dyn SequenceScorer, sequence: &[Label]) -> Result<LogProb> {
    LogProb::new(scorer.score(sequence)?)
}

/// Uniform distribution over 𝒱 ∪ {EOS}.
#[derive(Clone, Debug)]
pub struct UniformLm {
    vocab_size: usize,
}

impl UniformLm {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size }
    }
}

impl SequenceScorer for UniformLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_log_probs(&self, _history: &[Label]) -> StepLogProbs {
        let lp = -((self.vocab_size + 1) as f64).ln();
        StepLogProbs { labels: vec![lp; self.vocab_size], eos: Some(lp) }
    }

    fn context_order(&self) -> Option<usize> {
        Some(1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Perplexity {
    Finite(f64),
    /// The sequence at this corpus index has probability zero.
    Infinite {
        sequence: usize,
    },
}

impl Perplexity {
    pub fn value(self) -> f64 {
        match self {
            Perplexity::Finite(v) => v,
            Perplexity::Infinite { .. } => f64::INFINITY,
        }
    }
}

/// `exp(−Σ log P / Σ tokens)` where each sequence contributes `S` tokens plus
/// one for EOS when the scorer models it.
pub fn perplexity(scorer: &dyn SequenceScorer, corpus: &[LabelSequence]) -> Result<Perplexity> {
    if corpus.is_empty() {
        return Err(Error::Contract("perplexity of an empty corpus".into()));
    }
    let eos = usize::from(scorer.models_eos());
    let mut scores = Vec::with_capacity(corpus.len());
    let mut tokens = 0usize;
    for (i, seq) in corpus.iter().enumerate() {
        let lp = scorer.score(seq)?;
        if lp == f64::NEG_INFINITY {
            return Ok(Perplexity::Infinite { sequence: i });
        }
        scores.push(lp);
        tokens += seq.len() + eos;
    }
    if tokens == 0 {
        return Err(Error::UndefinedMetric("corpus has no tokens".into()));
    }
    // Sorting makes the sum independent of corpus order.
    scores.sort_by(f64::total_cmp);
    let total: f64 = scores.iter().sum();
    Ok(Perplexity::Finite((-total / tokens as f64).exp()))
}
