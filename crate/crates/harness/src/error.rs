use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] tslab_core::Error),

    #[error("configuration error: {0}")]
    Config(String),

    /// A phase was invoked before the phase that produces its input.
    #[error("pipeline order: {0}")]
    PipelineOrder(String),

    #[error("missing checkpoint {0}")]
    MissingCheckpoint(String),

    #[error("dataset format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
