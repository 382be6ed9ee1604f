use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::nn::{init_uniform, Dense, RecurrentCell};

/// Prediction-network flavour.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PredictorKind {
    /// Embedding of the last label followed by two tanh feed-forward layers (k = 1).
    ContextOne,
    /// Single gateless recurrent layer over the full history.
    Elman,
    /// Single LSTM layer over the full history.
    Lstm,
}

impl PredictorKind {
    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::ContextOne => "context1",
            PredictorKind::Elman => "elman",
            PredictorKind::Lstm => "lstm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "context1" | "context-1" => Ok(PredictorKind::ContextOne),
            "elman" | "full" => Ok(PredictorKind::Elman),
            "lstm" => Ok(PredictorKind::Lstm),
            _ => Err(Error::Config(format!("unknown predictor kind {s:?}"))),
        }
    }

    /// Markov order of the label context; `None` is unbounded.
    pub fn context_size(self) -> Option<usize> {
        match self {
            PredictorKind::ContextOne => Some(1),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab: Vocabulary,
    /// Feature dimension D.
    pub input_dim: usize,
    /// Half-width of the encoder's frame window.
    pub window: usize,
    pub encoder_hidden: usize,
    /// Encoder output dimension E.
    pub encoder_dim: usize,
    pub embed_dim: usize,
    pub predictor: PredictorKind,
    pub predictor_dim: usize,
    pub joint_hidden: usize,
}

impl ModelConfig {
    pub fn new(vocab: Vocabulary, input_dim: usize) -> Self {
        Self {
            vocab,
            input_dim,
            window: 1,
            encoder_hidden: 16,
            encoder_dim: 16,
            embed_dim: 8,
            predictor: PredictorKind::Elman,
            predictor_dim: 16,
            joint_hidden: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_dim", self.encoder_dim),
            ("embed_dim", self.embed_dim),
            ("predictor_dim", self.predictor_dim),
            ("joint_hidden", self.joint_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn window_width(&self) -> usize {
        self.input_dim * (2 * self.window + 1)
    }

    pub fn context_size(&self) -> Option<usize> {
        self.predictor.context_size()
    }
}

/// Which network a parameter block belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Encoder,
    Prediction,
    Joint,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub part: Part,
}

#[derive(Clone, Debug)]
pub(crate) enum PredNet {
    ContextOne { l1: Dense, l2: Dense },
    Recurrent(RecurrentCell),
}

/// Offsets of every layer inside the flat vector.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub enc1: Dense,
    pub enc2: Dense,
    /// `(|𝒱| + 1) × embed_dim`; the last row is the start-of-sequence embedding.
    pub embed: usize,
    pub pred: PredNet,
    /// Rows span `[h_t ; g]`, encoder columns first.
    pub joint_hidden: Dense,
    pub joint_out: Dense,
    pub blocks: Vec<ParamBlock>,
    pub total: usize,
}

struct Builder {
    blocks: Vec<ParamBlock>,
    next: usize,
}

impl Builder {
    fn add(&mut self, name: &str, len: usize, part: Part) -> usize {
        let offset = self.next;
        self.blocks.push(ParamBlock { name: name.to_string(), offset, len, part });
        self.next += len;
        offset
    }

    fn dense(&mut self, name: &str, n_in: usize, n_out: usize, bias: bool, part: Part) -> Dense {
        let w = self.add(&format!("{name}.weight"), n_in * n_out, part);
        let b = bias.then(|| self.add(&format!("{name}.bias"), n_out, part));
        Dense { w, b, n_in, n_out }
    }
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let mut b = Builder { blocks: Vec::new(), next: 0 };
        let enc1 = b.dense("encoder.l1", c.window_width(), c.encoder_hidden, true, Part::Encoder);
        let enc2 = b.dense("encoder.l2", c.encoder_hidden, c.encoder_dim, true, Part::Encoder);
        let embed = b.add("prediction.embedding", (c.vocab.len() + 1) * c.embed_dim, Part::Prediction);
        let p = c.predictor_dim;
        let pred = match c.predictor {
            PredictorKind::ContextOne => PredNet::ContextOne {
                l1: b.dense("prediction.l1", c.embed_dim, p, true, Part::Prediction),
                l2: b.dense("prediction.l2", p, p, true, Part::Prediction),
            },
            PredictorKind::Elman | PredictorKind::Lstm => {
                let lstm = c.predictor == PredictorKind::Lstm;
                let width = if lstm { 4 * p } else { p };
                let input = b.dense("prediction.rnn.input", c.embed_dim, width, true, Part::Prediction);
                let recurrent = b.dense("prediction.rnn.recurrent", p, width, false, Part::Prediction);
                PredNet::Recurrent(RecurrentCell { input, recurrent, hidden: p, lstm })
            }
        };
        let joint_hidden = b.dense("joint.hidden", c.encoder_dim + p, c.joint_hidden, true, Part::Joint);
        let joint_out = b.dense("joint.output", c.joint_hidden, c.vocab.output_dim(), true, Part::Joint);
        Layout { enc1, enc2, embed, pred, joint_hidden, joint_out, blocks: b.blocks, total: b.next }
    }
}

/// All trainable weights of encoder, prediction and joint networks as one flat vector.
#[derive(Clone, Debug)]
pub struct TransducerParams {
    pub(crate) config: ModelConfig,
    pub(crate) layout: Layout,
    pub(crate) data: Vec<f64>,
}

impl PartialEq for TransducerParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.data == other.data
    }
}

impl TransducerParams {
    /// Uniform `[-init_scale, init_scale]` initialization from `seed`.
    pub fn new(config: ModelConfig, seed: u64, init_scale: f64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        init_uniform(&mut rng, &mut p.data, init_scale);
        Ok(p)
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let data = vec![0.0; layout.total];
        Ok(Self { config, layout, data })
    }

    pub fn unflatten(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if data.len() != p.data.len() {
            return Err(Error::Config(format!(
                "flat vector has {} parameters, configuration needs {}",
                data.len(),
                p.data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.data.clone()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.config.vocab
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.layout.blocks
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        self.layout.blocks.iter().find(|b| b.name == name).map(|b| &self.data[b.offset..b.offset + b.len])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let b = self.layout.blocks.iter().find(|b| b.name == name)?.clone();
        Some(&mut self.data[b.offset..b.offset + b.len])
    }

    /// Encoder weights from `encoder_source`, prediction and joint weights from `predjoint_source`.
    pub fn swap_components(encoder_source: &Self, predjoint_source: &Self) -> Result<Self> {
        if encoder_source.config != predjoint_source.config {
            return Err(Error::Swap("models have different configurations".into()));
        }
        let mut out = predjoint_source.clone();
        for b in encoder_source.layout.blocks.iter().filter(|b| b.part == Part::Encoder) {
            out.data[b.offset..b.offset + b.len].copy_from_slice(&encoder_source.data[b.offset..b.offset + b.len]);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(kind: PredictorKind) -> ModelConfig {
        let mut c = ModelConfig::new(Vocabulary::with_size(3).unwrap(), 2);
        c.predictor = kind;
        c.encoder_hidden = 3;
        c.encoder_dim = 4;
        c.embed_dim = 2;
        c.predictor_dim = 3;
        c.joint_hidden = 5;
        c
    }

    #[test]
    fn flatten_round_trip() {
        for kind in [PredictorKind::ContextOne, PredictorKind::Elman, PredictorKind::Lstm] {
            let p = TransducerParams::new(config(kind), 7, 0.1).unwrap();
            let q = TransducerParams::unflatten(config(kind), p.flatten()).unwrap();
            assert_eq!(p, q);
            let covered: usize = p.blocks().iter().map(|b| b.len).sum();
            assert_eq!(covered, p.param_count());
        }
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        assert!(TransducerParams::unflatten(config(PredictorKind::Elman), vec![0.0; 3]).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = TransducerParams::new(config(PredictorKind::Elman), 3, 0.1).unwrap();
        let b = TransducerParams::new(config(PredictorKind::Elman), 3, 0.1).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|x| x.abs() <= 0.1));
        let c = TransducerParams::new(config(PredictorKind::Elman), 4, 0.1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn swap_parts() {
        let a = TransducerParams::new(config(PredictorKind::Elman), 1, 0.1).unwrap();
        let b = TransducerParams::new(config(PredictorKind::Elman), 2, 0.1).unwrap();
        assert_eq!(TransducerParams::swap_components(&a, &a).unwrap(), a);
        let ab = TransducerParams::swap_components(&a, &b).unwrap();
        assert_eq!(ab.param_count(), a.param_count());
        for blk in a.blocks() {
            let src = if blk.part == Part::Encoder { &a } else { &b };
            assert_eq!(ab.block(&blk.name), src.block(&blk.name));
        }
        // Re-swapping the parts back recovers both originals.
        let ba = TransducerParams::swap_components(&b, &a).unwrap();
        assert_eq!(TransducerParams::swap_components(&ab, &ba).unwrap(), a);
        assert_eq!(TransducerParams::swap_components(&ba, &ab).unwrap(), b);
        let other = TransducerParams::new(config(PredictorKind::Lstm), 1, 0.1).unwrap();
        assert!(matches!(TransducerParams::swap_components(&a, &other), Err(Error::Swap(_))));
    }
}
