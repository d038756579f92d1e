use std::path::Path;

use qdlag::QdlagError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NONCONVERGED: i32 = 3;
pub const EXIT_UNRELIABLE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    /// bad flags, unreadable input, schema violations
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Model(#[from] QdlagError),

    #[error("{0}")]
    NonConverged(String),

    #[error("{0}")]
    Unreliable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Model(QdlagError::InnerNonConvergence { .. }) => EXIT_NONCONVERGED,
            CliError::Model(QdlagError::Selection(_)) => EXIT_NONCONVERGED,
            CliError::Model(_) => EXIT_USAGE,
            CliError::NonConverged(_) => EXIT_NONCONVERGED,
            CliError::Unreliable(_) => EXIT_UNRELIABLE,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Usage(format!("{}: {err}", path.display()))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
