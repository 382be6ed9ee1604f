use std::collections::{BTreeMap, HashMap};

use super::SequenceModel;
use crate::error::{Error, Result};
use crate::lattice::ORACLE_LIMIT;
use crate::model::{all_sequences, count_sequences, LabelSequence};
use crate::numerics::log_softmax_into;

/// A free softmax over every sequence of length ≤ `max_len`, one logit row per
/// input index. Stands in for a transducer whose parameters do not interact.
#[derive(Clone, Debug, PartialEq)]
pub struct TableModel {
    vocab_size: usize,
    inputs: usize,
    space: Vec<LabelSequence>,
    index: HashMap<LabelSequence, usize>,
    logits: Vec<f64>,
}

pub struct TableCache {
    input: usize,
    log_probs: Vec<f64>,
    picked: Vec<Option<usize>>,
}

impl TableModel {
    /// All logits zero: the uniform distribution for every input.
    pub fn new(vocab_size: usize, max_len: usize, inputs: usize) -> Result<Self> {
        let n = count_sequences(vocab_size, max_len);
        if n.saturating_mul(inputs as u128) > ORACLE_LIMIT {
            return Err(Error::OracleScale(format!("table of {n} sequences × {inputs} inputs is too large")));
        }
        if inputs == 0 {
            return Err(Error::Config("table model needs at least one input".into()));
        }
        let space = all_sequences(vocab_size, max_len);
        let index = space.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        let logits = vec![0.0; space.len() * inputs];
        Ok(Self { vocab_size, inputs, space, index, logits })
    }

    pub fn space(&self) -> &[LabelSequence] {
        &self.space
    }

    /// Parameter index of the logit of `sequence` for input 0.
    pub fn position(&self, sequence: &[crate::model::Label]) -> Option<usize> {
        self.index.get(sequence).copied()
    }

    fn row_log_probs(&self, input: usize) -> Vec<f64> {
        let n = self.space.len();
        let mut lp = vec![0.0; n];
        log_softmax_into(&self.logits[input * n..(input + 1) * n], &mut lp);
        lp
    }

    pub fn distribution(&self, input: usize) -> Result<BTreeMap<LabelSequence, f64>> {
        if input >= self.inputs {
            return Err(Error::Contract(format!("input {input} out of range")));
        }
        Ok(self.space.iter().cloned().zip(self.row_log_probs(input).into_iter().map(f64::exp)).collect())
    }
}

impl SequenceModel for TableModel {
    type Input = usize;
    type Cache = TableCache;

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn forward(&self, input: &usize, space: &[LabelSequence]) -> Result<(Vec<f64>, TableCache)> {
        if *input >= self.inputs {
            return Err(Error::Contract(format!("input {input} out of range")));
        }
        let log_probs = self.row_log_probs(*input);
        let picked: Vec<Option<usize>> = space.iter().map(|a| self.index.get(a).copied()).collect();
        let scores = picked.iter().map(|i| i.map_or(f64::NEG_INFINITY, |i| log_probs[i])).collect();
        Ok((scores, TableCache { input: *input, log_probs, picked }))
    }

    fn backward(&self, cache: &TableCache, weights: &[f64], grad: &mut [f64]) {
        let n = self.space.len();
        let row = &mut grad[cache.input * n..(cache.input + 1) * n];
        let mut total = 0.0;
        for (i, w) in cache.picked.iter().zip(weights) {
            if let Some(i) = i {
                row[*i] += w;
                total += w;
            }
        }
        for (g, lp) in row.iter_mut().zip(&cache.log_probs) {
            *g -= total * lp.exp();
        }
    }
}
