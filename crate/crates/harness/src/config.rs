//! Flat `key = value` experiment configuration.
//!
//! Every key can also be given on the command line as `--key value`. The
//! config hash covers every key except `seed` and `work_dir`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn format_value(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn format_value(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_value!(bool, usize, u64, f64, String);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn format_value(&self) -> String {
        self.display().to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(T::parse_value).collect()
    }
    fn format_value(&self) -> String {
        self.iter().map(T::format_value).collect::<Vec<_>>().join(",")
    }
}

macro_rules! experiment_config {
    ($($(#[doc = $doc:literal])* $key:ident : $ty:ty = $default:expr;)*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct ExperimentConfig {
            $($(#[doc = $doc])* pub $key: $ty,)*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl ExperimentConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            /// Sets one key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($key) => {
                        self.$key = <$ty as ConfigValue>::parse_value(value.trim())
                            .map_err(|e| HarnessError::Config(format!("{key} = {value:?}: {e}")))?;
                    })*
                    _ => return Err(HarnessError::Config(format!("unknown key {key:?}"))),
                }
                Ok(())
            }

            /// Every key with its canonical textual value, sorted by key.
            pub fn to_pairs(&self) -> BTreeMap<&'static str, String> {
                let mut m = BTreeMap::new();
                $(m.insert(stringify!($key), <$ty as ConfigValue>::format_value(&self.$key));)*
                m
            }
        }
    };
}

experiment_config! {
    /// Base seed; data, initialization and batching seeds derive from it.
    seed: u64 = 1;
    work_dir: PathBuf = PathBuf::from("run");

    vocab_size: usize = 6;
    feature_dim: usize = 4;
    min_len: usize = 1;
    max_len: usize = 6;
    /// Each label occupies a uniform count of `1..=frames_per_label` frames.
    frames_per_label: usize = 2;
    prior_order: usize = 2;
    /// Dirichlet concentration of the random label prior; small is peaky.
    prior_concentration: f64 = 0.5;
    /// Per-position stop probability once `min_len` labels are emitted.
    stop_prob: f64 = 0.25;
    noise: f64 = 1.0;
    train_utts: usize = 512;
    dev_utts: usize = 64;
    elm_sentences: usize = 4096;

    predictor: String = "elman".into();
    window: usize = 1;
    encoder_hidden: usize = 16;
    encoder_dim: usize = 16;
    embed_dim: usize = 8;
    predictor_dim: usize = 16;
    joint_hidden: usize = 16;
    init_scale: f64 = 0.3;

    ce_epochs: usize = 30;
    batch_size: usize = 32;
    ce_step_size: f64 = 0.01;

    /// Fine-tune criteria: mmi_nbest, mbr_nbest, lf_mmi, mmi_exact, mbr_exact.
    /// lf_mmi only runs on context-1 models and always uses the bigram LM.
    finetune: Vec<String> = vec!["mmi_nbest".into(), "mbr_nbest".into()];
    /// Training LMs for fine-tuning: full (the external LM) and/or bigram.
    train_lms: Vec<String> = vec!["full".into(), "bigram".into()];
    ft_epochs: usize = 10;
    /// `adam` or `sgd`.
    ft_optimizer: String = "adam".into();
    ft_step_size: f64 = 0.0005;
    alpha: f64 = 1.0;
    beta: f64 = 0.3;
    nbest_size: usize = 4;
    nbest_beam: usize = 8;
    nbest_lambda: f64 = 0.3;
    lf_mmi_top_k: usize = 20;

    elm_embed: usize = 8;
    elm_hidden: usize = 24;
    elm_steps: usize = 300;
    elm_step_size: f64 = 1.0;
    dr_order: usize = 2;
    /// Additive smoothing of the count-based density-ratio and bigram LMs.
    ngram_delta: f64 = 0.1;

    beam_size: usize = 8;
    decode_modes: Vec<String> =
        ["none", "sf", "sf_ilm", "sf_dr", "sf_reduce_blank"].iter().map(|s| s.to_string()).collect();
    lambda1_grid: Vec<f64> = vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    lambda2_grid: Vec<f64> = vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
    rho_grid: Vec<f64> = vec![0.3, 0.5, 0.7, 0.9];

    /// Also run the pipeline with a context-1 predictor (plus lf_mmi) in
    /// `<work_dir>/context1` for the second WER table.
    context1_tables: bool = true;
    /// Replace the transducer by a free table model for `mmi_exact`/`mbr_exact`;
    /// the run then only reports the distance to the analytic optimum.
    table_model: bool = false;
}

pub const FINETUNE_CRITERIA: [&str; 5] = ["mmi_nbest", "mbr_nbest", "lf_mmi", "mmi_exact", "mbr_exact"];

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        self.validate()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hex SHA-256 of the canonical lines of every key but `seed` and `work_dir`.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.to_pairs() {
            if k != "seed" && k != "work_dir" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.vocab_size < 1 {
            return err("vocab_size must be at least 1".into());
        }
        if self.frames_per_label < 1 {
            return err("frames_per_label must be at least 1".into());
        }
        if self.min_len > self.max_len || self.max_len == 0 {
            return err("need 0 ≤ min_len ≤ max_len and max_len ≥ 1".into());
        }
        if !(self.noise >= 0.0) || !(self.prior_concentration > 0.0) || !(0.0..1.0).contains(&self.stop_prob) {
            return err("noise ≥ 0, prior_concentration > 0 and stop_prob in [0, 1) are required".into());
        }
        if self.prior_order < 1 || self.batch_size < 1 || self.nbest_size < 1 || self.beam_size < 1 {
            return err("prior_order, batch_size, nbest_size and beam_size must be positive".into());
        }
        for c in &self.finetune {
            if !FINETUNE_CRITERIA.contains(&c.as_str()) {
                return err(format!("unknown fine-tune criterion {c:?}"));
            }
        }
        for l in &self.train_lms {
            if l != "full" && l != "bigram" {
                return err(format!("unknown training LM {l:?}"));
            }
        }
        if self.ft_optimizer != "adam" && self.ft_optimizer != "sgd" {
            return err(format!("unknown optimizer {:?}", self.ft_optimizer));
        }
        for m in &self.decode_modes {
            tslab_core::decoder::FusionMode::parse(m)?;
        }
        tslab_core::model::PredictorKind::parse(&self.predictor)?;
        if self.lambda1_grid.is_empty() || self.lambda2_grid.is_empty() || self.rho_grid.is_empty() {
            return err("sweep grids must be non-empty".into());
        }
        Ok(())
    }

    /// Seed for a named sub-stream, stable across key reorderings.
    pub fn derived_seed(&self, stream: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(stream.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_comments() {
        let c =
            ExperimentConfig::parse("# toy\nvocab_size = 3 # small\nlambda1_grid = 0, 0.25\n\nfinetune=mmi_exact\n")
                .unwrap();
        assert_eq!(c.vocab_size, 3);
        assert_eq!(c.lambda1_grid, vec![0.0, 0.25]);
        assert_eq!(c.finetune, vec!["mmi_exact".to_string()]);
        let back = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors() {
        assert!(ExperimentConfig::parse("nope = 1").is_err());
        assert!(ExperimentConfig::parse("vocab_size = x").is_err());
        assert!(ExperimentConfig::parse("vocab_size = 0").is_err());
        assert!(ExperimentConfig::parse("finetune = ctc").is_err());
        assert!(ExperimentConfig::parse("decode_modes = sf,foo").is_err());
        assert!(ExperimentConfig::parse("just text").is_err());
    }

    #[test]
    fn hash_ignores_seed_and_work_dir() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 99;
        b.work_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.beta = 0.5;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        assert_ne!(a.derived_seed("data"), a.derived_seed("init"));
    }
}
