use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("infinite KL divergence: reference has zero mass at index {index}")]
    InfiniteKl { index: usize },

    #[error("component {index} covariance is not positive definite")]
    SingularCovariance { index: usize },

    #[error("conditioning point outside support")]
    OutsideSupport,

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("EM failed: {0}")]
    EmFailed(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NanGradient(String),

    #[error("loss is NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("loss node {0} is not connected to any parameter on the tape")]
    Disconnected(usize),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing scenes: {0:?}")]
    MissingScenes(Vec<u64>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
