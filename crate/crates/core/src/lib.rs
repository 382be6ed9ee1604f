//! Desk-scale strictly monotonic transducer laboratory.
//!
//! Cross-entropy training through an exact alignment lattice, sequence
//! discriminative training (MMI, MBR, lattice-free MMI) against a fixed
//! language model, internal-LM estimation, and beam search with shallow
//! fusion, ILM subtraction and blank reduction. Every loss exposes an
//! analytic gradient that can be checked against central differences.

pub mod decoder;
pub mod error;
pub mod ilm;
pub mod lattice;
pub mod lm;
pub mod model;
pub mod nn;
pub mod numerics;
pub mod seqtrain;

pub use error::{Error, Result};
