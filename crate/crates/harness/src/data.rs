//! Seeded synthetic corpora: a random n-gram label prior, prototype-plus-noise
//! acoustic frames, and the text corpus for the external LM.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use tslab_core::model::{all_sequences, Label, LabelSequence, Vocabulary};
use tslab_core::nn::Matrix;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDatasetConfig {
    pub vocab_size: usize,
    pub prior_order: usize,
    pub prior_concentration: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub stop_prob: f64,
    /// Maximum frames per label `r`.
    pub frames_per_label: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub train_utts: usize,
    pub dev_utts: usize,
    pub seed: u64,
}

impl SyntheticDatasetConfig {
    pub fn from_experiment(c: &ExperimentConfig) -> Self {
        Self {
            vocab_size: c.vocab_size,
            prior_order: c.prior_order,
            prior_concentration: c.prior_concentration,
            min_len: c.min_len,
            max_len: c.max_len,
            stop_prob: c.stop_prob,
            frames_per_label: c.frames_per_label,
            feature_dim: c.feature_dim,
            noise: c.noise,
            train_utts: c.train_utts,
            dev_utts: c.dev_utts,
            seed: c.derived_seed("data"),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.vocab_size < 1 {
            return Err(HarnessError::Config("vocabulary size must be at least 1".into()));
        }
        if self.frames_per_label < 1 || self.feature_dim < 1 || self.prior_order < 1 {
            return Err(HarnessError::Config("frames_per_label, feature_dim and prior_order must be positive".into()));
        }
        if self.min_len > self.max_len || !(self.noise >= 0.0) || !(0.0..1.0).contains(&self.stop_prob) {
            return Err(HarnessError::Config("invalid length range, noise or stop probability".into()));
        }
        if !(self.prior_concentration > 0.0) {
            return Err(HarnessError::Config("prior concentration must be positive".into()));
        }
        Ok(())
    }
}

/// Random n-gram over labels with a length-dependent stop rule:
/// no stop before `min_len`, forced stop at `max_len`, otherwise stop with
/// `stop_prob` and draw the next label from the context distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelPrior {
    order: usize,
    vocab_size: usize,
    min_len: usize,
    max_len: usize,
    stop_prob: f64,
    dists: BTreeMap<LabelSequence, Vec<f64>>,
}

impl LabelPrior {
    pub fn random(c: &SyntheticDatasetConfig) -> Result<Self> {
        c.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0x5052_494f_5200);
        let gamma = Gamma::new(c.prior_concentration, 1.0)
            .map_err(|e| HarnessError::Config(format!("prior concentration: {e}")))?;
        let mut dists = BTreeMap::new();
        for ctx in all_sequences(c.vocab_size, c.prior_order - 1) {
            let w: Vec<f64> = (0..c.vocab_size).map(|_| gamma.sample(&mut rng) + 1e-12).collect();
            let z: f64 = w.iter().sum();
            dists.insert(ctx, w.into_iter().map(|x| x / z).collect());
        }
        Ok(Self {
            order: c.prior_order,
            vocab_size: c.vocab_size,
            min_len: c.min_len,
            max_len: c.max_len,
            stop_prob: c.stop_prob,
            dists,
        })
    }

    fn context<'a>(&self, history: &'a [Label]) -> &'a [Label] {
        &history[history.len().saturating_sub(self.order - 1)..]
    }

    fn stop_prob_at(&self, len: usize) -> f64 {
        if len >= self.max_len {
            1.0
        } else if len < self.min_len {
            0.0
        } else {
            self.stop_prob
        }
    }

    /// Label distribution given the history, ignoring the stop decision.
    pub fn label_dist(&self, history: &[Label]) -> &[f64] {
        &self.dists[self.context(history)]
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> LabelSequence {
        let mut seq = Vec::new();
        loop {
            let stop = self.stop_prob_at(seq.len());
            if stop >= 1.0 || (stop > 0.0 && rng.random::<f64>() < stop) {
                return seq;
            }
            let dist = self.label_dist(&seq);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = dist.len() - 1;
            for (k, p) in dist.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = k;
                    break;
                }
            }
            seq.push(Label::new(pick as u32));
        }
    }

    /// Exact expected count of every label per sequence, and the expected length.
    pub fn expected_counts(&self) -> (Vec<f64>, f64) {
        // Probability mass of reaching each (length, context) state without stopping.
        let mut states: BTreeMap<LabelSequence, f64> = BTreeMap::from([(Vec::new(), 1.0)]);
        let mut counts = vec![0.0; self.vocab_size];
        for len in 0..self.max_len {
            let go = 1.0 - self.stop_prob_at(len);
            let mut next: BTreeMap<LabelSequence, f64> = BTreeMap::new();
            for (ctx, mass) in &states {
                for (k, p) in self.label_dist(ctx).iter().enumerate() {
                    let m = mass * go * p;
                    counts[k] += m;
                    let mut h = ctx.clone();
                    h.push(Label::new(k as u32));
                    let h = self.context(&h).to_vec();
                    *next.entry(h).or_insert(0.0) += m;
                }
            }
            states = next;
        }
        let len = counts.iter().sum();
        (counts, len)
    }

    /// Exact `log P(a)` including the stop decision.
    pub fn log_prob(&self, seq: &[Label]) -> f64 {
        let mut lp = 0.0;
        for s in 0..seq.len() {
            lp += (1.0 - self.stop_prob_at(s)).ln() + self.label_dist(&seq[..s])[seq[s].index()].ln();
        }
        lp + self.stop_prob_at(seq.len()).ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub features: Matrix,
    pub labels: LabelSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub prior: LabelPrior,
    /// Per-label frame prototypes, `|𝒱| × D`.
    pub prototypes: Matrix,
}

impl Dataset {
    pub fn train_transcripts(&self) -> Vec<LabelSequence> {
        self.train.iter().map(|u| u.labels.clone()).collect()
    }

    pub fn dev_transcripts(&self) -> Vec<LabelSequence> {
        self.dev.iter().map(|u| u.labels.clone()).collect()
    }
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn synthesize<R: Rng>(rng: &mut R, labels: &[Label], prototypes: &Matrix, r: usize, noise: f64) -> Matrix {
    let d = prototypes.cols();
    let mut data = Vec::new();
    let mut frames = 0;
    for l in labels {
        let n = rng.random_range(1..=r);
        for _ in 0..n {
            for x in prototypes.row(l.index()) {
                let eps = normal(rng);
                data.push(x + noise * eps);
            }
            frames += 1;
        }
    }
    Matrix::from_vec(frames, d, data).expect("frame buffer has frames × D entries")
}

pub fn generate_dataset(c: &SyntheticDatasetConfig) -> Result<Dataset> {
    c.validate()?;
    let vocab = Vocabulary::with_size(c.vocab_size)?;
    let prior = LabelPrior::random(c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let proto: Vec<f64> = (0..c.vocab_size * c.feature_dim).map(|_| normal(&mut rng)).collect();
    let prototypes = Matrix::from_vec(c.vocab_size, c.feature_dim, proto)?;
    let mut make = |prefix: &str, n: usize| -> Vec<Utterance> {
        (0..n)
            .map(|i| {
                let labels = prior.sample(&mut rng);
                let features = synthesize(&mut rng, &labels, &prototypes, c.frames_per_label, c.noise);
                Utterance { id: format!("{prefix}{i:05}"), features, labels }
            })
            .collect()
    };
    let train = make("train", c.train_utts);
    let dev = make("dev", c.dev_utts);
    Ok(Dataset { vocab, train, dev, prior, prototypes })
}

/// Text corpus for the external LM, sampled from the same prior with its own stream.
pub fn generate_text(prior: &LabelPrior, n: usize, seed: u64) -> Vec<LabelSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| prior.sample(&mut rng)).collect()
}

/// `UTT <id> T=<int> S=<int>`, `T` feature lines, one transcript line.
pub fn write_utterances<W: Write>(w: &mut W, vocab: &Vocabulary, utts: &[Utterance]) -> Result<()> {
    for u in utts {
        writeln!(w, "UTT {} T={} S={}", u.id, u.features.rows(), u.labels.len())?;
        for t in 0..u.features.rows() {
            let line: Vec<String> = u.features.row(t).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        writeln!(w, "{}", vocab.format_sequence(&u.labels)?)?;
    }
    Ok(())
}

pub fn read_utterances<R: BufRead>(r: R, vocab: &Vocabulary) -> Result<Vec<Utterance>> {
    let mut lines = r.lines();
    let mut out = Vec::new();
    let bad = |m: String| HarnessError::Format(m);
    while let Some(header) = lines.next() {
        let header = header?;
        if header.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (id, t, s) = match parts.as_slice() {
            ["UTT", id, t, s] => {
                let num = |f: &str, p: &str| f.strip_prefix(p).and_then(|x| x.parse::<usize>().ok());
                match (num(t, "T="), num(s, "S=")) {
                    (Some(t), Some(s)) => (id.to_string(), t, s),
                    _ => return Err(bad(format!("bad header {header:?}"))),
                }
            }
            _ => return Err(bad(format!("bad header {header:?}"))),
        };
        let mut data = Vec::new();
        let mut dim = None;
        for _ in 0..t {
            let line = lines.next().ok_or_else(|| bad(format!("{id}: truncated features")))??;
            let row = line
                .split_whitespace()
                .map(|x| x.parse::<f64>().map_err(|_| bad(format!("{id}: bad number {x:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if *dim.get_or_insert(row.len()) != row.len() {
                return Err(bad(format!("{id}: ragged feature rows")));
            }
            data.extend(row);
        }
        let transcript = lines.next().ok_or_else(|| bad(format!("{id}: missing transcript")))??;
        let labels = vocab.parse_sequence(&transcript)?;
        if labels.len() != s {
            return Err(bad(format!("{id}: header says S={s}, transcript has {}", labels.len())));
        }
        let features = Matrix::from_vec(t, dim.unwrap_or(0), data)?;
        out.push(Utterance { id, features, labels });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SyntheticDatasetConfig {
        let mut c = SyntheticDatasetConfig::from_experiment(&ExperimentConfig::default());
        c.seed = seed;
        c.train_utts = 20;
        c.dev_utts = 5;
        c
    }

    #[test]
    fn exact_prototypes_without_noise() {
        let mut c = small(3);
        c.noise = 0.0;
        c.frames_per_label = 1;
        let d = generate_dataset(&c).unwrap();
        for u in d.train.iter().chain(&d.dev) {
            assert_eq!(u.features.rows(), u.labels.len());
            for (t, l) in u.labels.iter().enumerate() {
                assert_eq!(u.features.row(t), d.prototypes.row(l.index()));
            }
        }
    }

    #[test]
    fn lengths_respect_bounds() {
        let d = generate_dataset(&small(4)).unwrap();
        for u in &d.train {
            let s = u.labels.len();
            assert!((1..=6).contains(&s));
            assert!(s <= u.features.rows() && u.features.rows() <= 2 * s);
        }
    }

    #[test]
    fn seeded_generation_is_bitwise_reproducible() {
        assert_eq!(generate_dataset(&small(5)).unwrap(), generate_dataset(&small(5)).unwrap());
        assert_ne!(generate_dataset(&small(5)).unwrap().train, generate_dataset(&small(6)).unwrap().train);
    }

    #[test]
    fn file_round_trip_is_bitwise() {
        let d = generate_dataset(&small(7)).unwrap();
        let mut bytes = Vec::new();
        write_utterances(&mut bytes, &d.vocab, &d.train).unwrap();
        let back = read_utterances(bytes.as_slice(), &d.vocab).unwrap();
        assert_eq!(back, d.train);
        assert!(read_utterances("UTT x T=1 S=1\n0.5\n".as_bytes(), &d.vocab).is_err());
        assert!(read_utterances("UTT x T=1 S=2\n0.5\na\n".as_bytes(), &d.vocab).is_err());
    }

    #[test]
    fn zero_vocabulary_is_rejected() {
        let mut c = small(1);
        c.vocab_size = 0;
        assert!(generate_dataset(&c).is_err());
    }

    #[test]
    fn prior_probabilities_sum_to_one() {
        let mut c = small(8);
        c.vocab_size = 3;
        c.max_len = 4;
        let prior = LabelPrior::random(&c).unwrap();
        let total: f64 = all_sequences(3, 4).iter().map(|a| prior.log_prob(a).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12, "{total}");
        let (counts, len) = prior.expected_counts();
        let direct: f64 = all_sequences(3, 4).iter().map(|a| prior.log_prob(a).exp() * a.len() as f64).sum();
        assert!((len - direct).abs() < 1e-12);
        let direct0: f64 = all_sequences(3, 4)
            .iter()
            .map(|a| prior.log_prob(a).exp() * a.iter().filter(|l| l.index() == 0).count() as f64)
            .sum();
        assert!((counts[0] - direct0).abs() < 1e-12);
    }

    #[test]
    fn unigram_frequencies_match_prior_within_three_standard_errors() {
        let prior = LabelPrior::random(&small(9)).unwrap();
        let (expected, exp_len) = prior.expected_counts();
        let corpus = generate_text(&prior, 10_000, 11);
        let total: f64 = corpus.iter().map(|a| a.len() as f64).sum();
        for k in 0..expected.len() {
            let f = expected[k] / exp_len;
            let counts: Vec<f64> = corpus.iter().map(|a| a.iter().filter(|l| l.index() == k).count() as f64).collect();
            let ratio = counts.iter().sum::<f64>() / total;
            // Ratio-estimator standard error over independent sequences.
            let resid: f64 = corpus.iter().zip(&counts).map(|(a, c)| (c - ratio * a.len() as f64).powi(2)).sum();
            let se = resid.sqrt() / total;
            assert!((ratio - f).abs() <= 3.0 * se, "label {k}: {ratio} vs {f} (se {se})");
        }
    }
}
