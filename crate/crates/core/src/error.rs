//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the localization pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad grid step, empty band, non-positive t60, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Input outside an operation's domain (coincident microphone, non-unit RTF, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Evaluation at a singular point of a field model.
    #[error("singularity: {0}")]
    Singularity(String),

    /// Malformed or unsupported file contents.
    #[error("format error: {0}")]
    Format(String),

    /// Input too short for the requested analysis.
    #[error("size error: {0}")]
    Size(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Non-finite values or an unrecoverable factorization failure inside a solver.
    #[error("numerical failure at iteration {iteration}: {detail}")]
    Numerical { iteration: usize, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
