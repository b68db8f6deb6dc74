use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the binary file formats (feature files, checkpoints,
/// training state).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { expected: u32, found: u32 },
    #[error("file truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("malformed content: {0}")]
    Malformed(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown object id {0}")]
    UnknownObject(u32),
    #[error(
        "pair ({x}, {y}) mixes categories {cat_x} and {cat_y} under the same-category objective"
    )]
    CategoryMismatch {
        x: u32,
        y: u32,
        cat_x: u32,
        cat_y: u32,
    },
    #[error("batch sampled by {strategy} cannot be scored with the {objective} objective")]
    ObjectiveMismatch {
        strategy: &'static str,
        objective: &'static str,
    },
    #[error("non-finite loss at epoch {epoch}, minibatch {minibatch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        minibatch: usize,
        detail: String,
    },
    #[error("no query had a relevant gallery item ({skipped} skipped)")]
    NoRelevantQueries { skipped: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
