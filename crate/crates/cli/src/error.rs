use owsc_core::{Error, FormatError};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Core(e) => match e {
                Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
                Error::Format(FormatError::DimensionMismatch { .. }) => EXIT_CONFIG,
                Error::Format(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            },
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

pub type CliResult<T> = Result<T, CliError>;
