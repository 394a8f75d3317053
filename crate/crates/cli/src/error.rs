use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] pgu_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient resources: {0}")]
    Resource(String),
}

impl CliError {
    /// Process exit status: 1 validation, 2 IO or file format, 3 numeric,
    /// 4 fingerprint mismatch, 5 resource.
    pub fn exit_code(&self) -> i32 {
        use pgu_core::Error as E;
        match self {
            CliError::Core(E::Validation(_)) | CliError::Config(_) => 1,
            CliError::Core(E::Io(_) | E::Format { .. }) | CliError::Io { .. } | CliError::Corrupt { .. } => 2,
            CliError::Core(E::Numerical(_) | E::NoConvergence { .. }) => 3,
            CliError::Core(E::Fingerprint(_)) => 4,
            CliError::Resource(_) => 5,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Corrupt { path: path.into(), message: message.into() }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
