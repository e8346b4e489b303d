use std::io;

use dlmbir_core::Error as CoreError;
use thiserror::Error;

/// Failure classes with stable process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Failure(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("shape or variant mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Failure(_) => 1,
            CliError::MissingInput(_) => 2,
            CliError::Mismatch(_) => 3,
        }
    }

    /// Same class, with `context` prefixed to the message.
    pub fn context(self, context: impl std::fmt::Display) -> Self {
        match self {
            CliError::Failure(m) => CliError::Failure(format!("{context}: {m}")),
            CliError::MissingInput(m) => CliError::MissingInput(format!("{context}: {m}")),
            CliError::Mismatch(m) => CliError::Mismatch(format!("{context}: {m}")),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => {
                CliError::MissingInput(e.to_string())
            }
            CoreError::ShapeMismatch { .. } => CliError::Mismatch(e.to_string()),
            _ => CliError::Failure(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Reclassifies an argument error from the core as a mismatch (exit 3).
pub fn as_mismatch(e: CoreError) -> CliError {
    match e {
        CoreError::InvalidArgument(m) => CliError::Mismatch(m),
        other => other.into(),
    }
}
