use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("unsupported maxval {0} (only 255 is supported)")]
    UnsupportedMaxval(u32),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("crop out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value in {term} at iteration {iteration}")]
    NonFinite { term: String, iteration: usize },

    #[error("non-finite gradient in parameter tensor {0}")]
    NonFiniteGradient(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether this error reports a NaN/Inf rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::NonFiniteGradient(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
