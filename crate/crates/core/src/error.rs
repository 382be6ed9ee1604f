use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A documented precondition of an operation does not hold.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    /// An enumeration oracle was asked to enumerate more than it is allowed to.
    #[error("oracle scale exceeded: {0}")]
    OracleScale(String),

    #[error("finite-difference oracle failed at coordinate {coordinate}: loss is {value}")]
    GradientOracle { coordinate: usize, value: f64 },

    /// Corrupt training data, e.g. a target longer than its utterance.
    #[error("training data error: {0}")]
    TrainingData(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("degenerate hypothesis space: every entry has zero probability")]
    DegenerateSpace,

    #[error("singularity: {0}")]
    Singularity(String),

    #[error("component swap error: {0}")]
    Swap(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
