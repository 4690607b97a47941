//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("history length mismatch: expected {expected}, got {got}")]
    HistoryLength { expected: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("sum-of-exponentials construction failed: {0}")]
    SoeConstruction(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(
        "Newton iteration diverged at step {step}: residual {residual:.3e} \
         after {iters} iterations"
    )]
    NewtonDiverged {
        step: usize,
        iters: usize,
        residual: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
