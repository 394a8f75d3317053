use thiserror::Error;

/// Errors raised across the unlearning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated an operation's preconditions.
    #[error("validation error: {0}")]
    Validation(String),

    /// Iterative or floating-point computation failed.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// The eigensolver hit its sweep limit.
    #[error("eigensolver did not converge: off-diagonal norm {off_norm:e} after {sweeps} sweeps")]
    NoConvergence { off_norm: f64, sweeps: usize },

    /// Activations were produced by different weights than the cached Gram.
    #[error("fingerprint mismatch: {0}")]
    Fingerprint(String),

    /// A binary container was malformed.
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
