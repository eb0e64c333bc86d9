//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An input was structurally valid but degenerate (e.g. all-zero signal).
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A file was recognized but its payload is damaged or truncated.
    #[error("corrupt file: {0}")]
    CorruptFile(String),

    /// A file carries a magic/version this build does not understand.
    #[error("unsupported file version: found {found}, expected {expected}")]
    VersionMismatch { found: String, expected: String },

    /// Tensor or record dimensions do not agree.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::CorruptFile(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
