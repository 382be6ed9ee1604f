use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_labels, SequenceScorer, StepLogProbs};
use crate::error::{Error, Result};
use crate::lattice::LossResult;
use crate::model::{Container, Label, LabelSequence};
use crate::nn::{init_uniform, CellStep, Dense, RecurrentCell};
use crate::numerics::log_softmax_into;

#[derive(Clone, Debug, PartialEq)]
pub struct NeuralLmConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub steps: usize,
    pub step_size: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for NeuralLmConfig {
    fn default() -> Self {
        Self { embed_dim: 8, hidden_dim: 16, steps: 300, step_size: 1.0, init_scale: 0.1, seed: 0 }
    }
}

/// Embedding, one tanh recurrent layer, softmax over `𝒱 ∪ {EOS}`.
///
/// The embedding has `|𝒱| + 1` rows; the last one is the start symbol. Output
/// index `|𝒱|` is EOS.
#[derive(Clone, Debug)]
pub struct NeuralLm {
    vocab_size: usize,
    embed_dim: usize,
    cell: RecurrentCell,
    out: Dense,
    params: Vec<f64>,
}

impl PartialEq for NeuralLm {
    fn eq(&self, other: &Self) -> bool {
        self.vocab_size == other.vocab_size
            && self.embed_dim == other.embed_dim
            && self.cell.hidden == other.cell.hidden
            && self.params == other.params
    }
}

struct TrieNode {
    parent: usize,
    row: usize,
    counts: Vec<f64>,
}

/// Distinct prefixes of a corpus with successor counts. Node 0 is the empty prefix.
struct PrefixTrie {
    nodes: Vec<TrieNode>,
    tokens: f64,
}

impl PrefixTrie {
    fn build(corpus: &[LabelSequence], vocab_size: usize) -> Result<Self> {
        let mut nodes = vec![TrieNode { parent: 0, row: vocab_size, counts: vec![0.0; vocab_size + 1] }];
        let mut children: Vec<Vec<Option<usize>>> = vec![vec![None; vocab_size]];
        let mut tokens = 0.0;
        for seq in corpus {
            check_labels(vocab_size, seq)?;
            let mut node = 0;
            for l in seq {
                nodes[node].counts[l.index()] += 1.0;
                node = match children[node][l.index()] {
                    Some(c) => c,
                    None => {
                        let id = nodes.len();
                        nodes.push(TrieNode { parent: node, row: l.index(), counts: vec![0.0; vocab_size + 1] });
                        children.push(vec![None; vocab_size]);
                        children[node][l.index()] = Some(id);
                        id
                    }
                };
            }
            nodes[node].counts[vocab_size] += 1.0;
            tokens += (seq.len() + 1) as f64;
        }
        Ok(Self { nodes, tokens })
    }
}

impl NeuralLm {
    pub fn new(vocab_size: usize, config: &NeuralLmConfig) -> Result<Self> {
        if vocab_size == 0 || config.embed_dim == 0 || config.hidden_dim == 0 {
            return Err(Error::Config("neural LM dimensions must be positive".into()));
        }
        let mut lm = Self::zeros(vocab_size, config.embed_dim, config.hidden_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        init_uniform(&mut rng, &mut lm.params, config.init_scale);
        Ok(lm)
    }

    fn zeros(vocab_size: usize, embed_dim: usize, hidden: usize) -> Self {
        let v1 = vocab_size + 1;
        let mut off = v1 * embed_dim;
        let mut dense = |n_in: usize, n_out: usize, bias: bool| {
            let w = off;
            off += n_in * n_out;
            let b = bias.then(|| {
                let b = off;
                off += n_out;
                b
            });
            Dense { w, b, n_in, n_out }
        };
        let input = dense(embed_dim, hidden, true);
        let recurrent = dense(hidden, hidden, false);
        let out = dense(hidden, v1, true);
        let cell = RecurrentCell { input, recurrent, hidden, lstm: false };
        Self { vocab_size, embed_dim, cell, out, params: vec![0.0; off] }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn embedding(&self, row: usize) -> &[f64] {
        &self.params[row * self.embed_dim..(row + 1) * self.embed_dim]
    }

    fn step(&self, row: usize, prev: Option<&CellStep>) -> CellStep {
        self.cell.step(&self.params, self.embedding(row), prev)
    }

    fn output_log_probs(&self, state: &CellStep, out: &mut [f64]) {
        let mut logits = vec![0.0; self.vocab_size + 1];
        self.out.forward(&self.params, state.output(), &mut logits);
        log_softmax_into(&logits, out);
    }

    /// Mean negative log-likelihood per token (labels plus EOS) and its gradient.
    pub fn corpus_loss_and_grad(&self, corpus: &[LabelSequence]) -> Result<LossResult> {
        if corpus.is_empty() {
            return Err(Error::Training("empty LM training corpus".into()));
        }
        let trie = PrefixTrie::build(corpus, self.vocab_size)?;
        Ok(self.trie_loss_and_grad(&trie))
    }

    fn trie_loss_and_grad(&self, trie: &PrefixTrie) -> LossResult {
        let p = &self.params;
        let v1 = self.vocab_size + 1;
        let n = trie.nodes.len();
        // Parents always precede children, so one forward pass suffices.
        let mut steps: Vec<CellStep> = Vec::with_capacity(n);
        for (i, node) in trie.nodes.iter().enumerate() {
            let prev = (i > 0).then(|| &steps[node.parent]);
            let s = self.step(node.row, prev);
            steps.push(s);
        }
        let mut grad = vec![0.0; p.len()];
        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; self.cell.hidden]; n];
        let mut loss = 0.0;
        let mut lp = vec![0.0; v1];
        let scale = 1.0 / trie.tokens;
        for i in (0..n).rev() {
            let node = &trie.nodes[i];
            self.output_log_probs(&steps[i], &mut lp);
            let total: f64 = node.counts.iter().sum();
            let mut dlogits = vec![0.0; v1];
            for k in 0..v1 {
                if node.counts[k] > 0.0 {
                    loss -= node.counts[k] * lp[k];
                }
                dlogits[k] = scale * (total * lp[k].exp() - node.counts[k]);
            }
            let mut dhi = std::mem::take(&mut dh[i]);
            self.out.backward(p, steps[i].output(), &dlogits, &mut grad, Some(&mut dhi));
            let prev = (i > 0).then(|| &steps[node.parent]);
            let mut dx = vec![0.0; self.embed_dim];
            let (dprev, _) =
                self.cell.backward_step(p, self.embedding(node.row), prev, &steps[i], &dhi, None, &mut grad, &mut dx);
            let e0 = node.row * self.embed_dim;
            for (g, d) in grad[e0..e0 + self.embed_dim].iter_mut().zip(&dx) {
                *g += d;
            }
            if i > 0 {
                for (a, b) in dh[node.parent].iter_mut().zip(&dprev) {
                    *a += b;
                }
            }
        }
        LossResult { loss: loss * scale, grad }
    }

    pub fn to_container(&self) -> Container {
        Container {
            config: vec![
                ("kind".into(), "neural_lm".into()),
                ("vocab_size".into(), self.vocab_size.to_string()),
                ("embed_dim".into(), self.embed_dim.to_string()),
                ("hidden_dim".into(), self.cell.hidden.to_string()),
            ],
            blocks: vec![("params".into(), self.params.clone())],
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.get("kind")? != "neural_lm" {
            return Err(Error::Format("checkpoint does not hold a neural LM".into()));
        }
        let mut lm = Self::zeros(c.get_usize("vocab_size")?, c.get_usize("embed_dim")?, c.get_usize("hidden_dim")?);
        match c.blocks.as_slice() {
            [(name, values)] if name == "params" && values.len() == lm.params.len() => {
                lm.params.copy_from_slice(values);
                Ok(lm)
            }
            _ => Err(Error::Format("neural LM checkpoint has unexpected blocks".into())),
        }
    }
}

/// Full-batch gradient descent on the mean per-token cross-entropy.
pub fn train_neural_lm(corpus: &[LabelSequence], vocab_size: usize, config: &NeuralLmConfig) -> Result<NeuralLm> {
    if corpus.is_empty() {
        return Err(Error::Training("empty LM training corpus".into()));
    }
    if !(config.step_size > 0.0) {
        return Err(Error::Config("LM step size must be positive".into()));
    }
    let mut lm = NeuralLm::new(vocab_size, config)?;
    let trie = PrefixTrie::build(corpus, vocab_size)?;
    for step in 0..config.steps {
        let LossResult { loss, grad } = lm.trie_loss_and_grad(&trie);
        if !loss.is_finite() {
            return Err(Error::Training(format!("LM loss became {loss} at step {step}")));
        }
        for (w, g) in lm.params.iter_mut().zip(&grad) {
            *w -= config.step_size * g;
        }
    }
    Ok(lm)
}

impl SequenceScorer for NeuralLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_log_probs(&self, history: &[Label]) -> StepLogProbs {
        let mut state = self.step(self.vocab_size, None);
        for l in history {
            state = self.step(l.index().min(self.vocab_size - 1), Some(&state));
        }
        let mut lp = vec![0.0; self.vocab_size + 1];
        self.output_log_probs(&state, &mut lp);
        let eos = lp.pop();
        StepLogProbs { labels: lp, eos }
    }

    fn score(&self, sequence: &[Label]) -> Result<f64> {
        check_labels(self.vocab_size, sequence)?;
        let mut lp = vec![0.0; self.vocab_size + 1];
        let mut state = self.step(self.vocab_size, None);
        let mut total = 0.0;
        for l in sequence {
            self.output_log_probs(&state, &mut lp);
            total += lp[l.index()];
            state = self.step(l.index(), Some(&state));
        }
        self.output_log_probs(&state, &mut lp);
        Ok(total + lp[self.vocab_size])
    }
}
