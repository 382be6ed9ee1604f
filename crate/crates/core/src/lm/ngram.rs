use std::collections::BTreeMap;

use super::{check_labels, SequenceScorer, StepLogProbs};
use crate::error::{Error, Result};
use crate::model::{Label, LabelSequence};

/// Successor counts per truncated context. The last successor slot is EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramCounts {
    order: usize,
    vocab_size: usize,
    counts: BTreeMap<Vec<Label>, (Vec<u64>, u64)>,
}

impl NGramCounts {
    pub fn new(order: usize, vocab_size: usize) -> Result<Self> {
        if order < 1 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        if vocab_size < 1 {
            return Err(Error::Config("n-gram vocabulary must be non-empty".into()));
        }
        Ok(Self { order, vocab_size, counts: BTreeMap::new() })
    }

    fn context<'a>(&self, history: &'a [Label]) -> &'a [Label] {
        &history[history.len().saturating_sub(self.order - 1)..]
    }

    /// Counts one successor (`None` = EOS) after `history`.
    pub fn observe(&mut self, history: &[Label], successor: Option<Label>) {
        let ctx = self.context(history).to_vec();
        let slot = successor.map_or(self.vocab_size, Label::index);
        let entry = self.counts.entry(ctx).or_insert_with(|| (vec![0; self.vocab_size + 1], 0));
        entry.0[slot] += 1;
        entry.1 += 1;
    }

    pub fn observe_sequence(&mut self, sequence: &[Label]) -> Result<()> {
        check_labels(self.vocab_size, sequence)?;
        for s in 0..sequence.len() {
            self.observe(&sequence[..s], Some(sequence[s]));
        }
        self.observe(sequence, None);
        Ok(())
    }

    pub fn count(&self, history: &[Label], successor: Option<Label>) -> u64 {
        let slot = successor.map_or(self.vocab_size, Label::index);
        self.counts.get(self.context(history)).map_or(0, |(c, _)| c[slot])
    }
}

/// Additively smoothed n-gram model:
/// `P(w | ctx) = (count(ctx, w) + δ) / (count(ctx) + δ (|𝒱| + 1))`.
#[derive(Clone, Debug, PartialEq)]
pub struct NGramLm {
    counts: NGramCounts,
    delta: f64,
}

impl NGramLm {
    pub fn from_counts(counts: NGramCounts, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::Config(format!("smoothing constant must be positive, got {delta}")));
        }
        Ok(Self { counts, delta })
    }

    pub fn order(&self) -> usize {
        self.counts.order
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn counts(&self) -> &NGramCounts {
        &self.counts
    }

    /// Conditional probability of `successor` (`None` = EOS) after `history`.
    pub fn prob(&self, history: &[Label], successor: Option<Label>) -> f64 {
        let v1 = (self.counts.vocab_size + 1) as f64;
        let slot = successor.map_or(self.counts.vocab_size, Label::index);
        match self.counts.counts.get(self.counts.context(history)) {
            Some((c, total)) => (c[slot] as f64 + self.delta) / (*total as f64 + self.delta * v1),
            None => 1.0 / v1,
        }
    }
}

pub fn train_ngram(corpus: &[LabelSequence], vocab_size: usize, order: usize, delta: f64) -> Result<NGramLm> {
    if corpus.is_empty() {
        return Err(Error::Training("cannot train an n-gram on an empty corpus".into()));
    }
    let mut counts = NGramCounts::new(order, vocab_size)?;
    for seq in corpus {
        counts.observe_sequence(seq)?;
    }
    NGramLm::from_counts(counts, delta)
}

impl SequenceScorer for NGramLm {
    fn vocab_size(&self) -> usize {
        self.counts.vocab_size
    }

    fn next_log_probs(&self, history: &[Label]) -> StepLogProbs {
        let v = self.counts.vocab_size;
        let v1 = (v + 1) as f64;
        match self.counts.counts.get(self.counts.context(history)) {
            Some((c, total)) => {
                let log_denom = (*total as f64 + self.delta * v1).ln();
                let lp = |k: usize| (c[k] as f64 + self.delta).ln() - log_denom;
                StepLogProbs { labels: (0..v).map(lp).collect(), eos: Some(lp(v)) }
            }
            None => {
                let u = -v1.ln();
                StepLogProbs { labels: vec![u; v], eos: Some(u) }
            }
        }
    }

    fn context_order(&self) -> Option<usize> {
        Some(self.counts.order)
    }
}
