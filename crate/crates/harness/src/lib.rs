//! Experiment driver: synthetic data, the CE-then-fine-tune pipeline,
//! decoding sweeps, table reports and the oracle suite.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod oracle;
pub mod pipeline;
pub mod records;
pub mod tables;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
