use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("bad magic bytes in {0}")]
    BadMagic(String),

    #[error("truncated payload: {0}")]
    Truncated(String),

    #[error("invalid label value {value} at index {index}")]
    InvalidLabel { value: u8, index: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("shape {height}x{width} is not divisible by {factor}")]
    IndivisibleShape { height: usize, width: usize, factor: usize },

    #[error("split `{0}` is empty or too small")]
    EmptySplit(String),

    #[error("batch of size {0} is too small for pairing (need at least 2)")]
    BatchTooSmall(usize),

    #[error("percentile of an empty list")]
    EmptyList,

    #[error("class {0} region is empty")]
    EmptyMask(u8),

    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),

    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),

    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used for CLI exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
