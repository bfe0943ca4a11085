use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{axis} index {index} out of range (limit {limit})")]
    Range {
        axis: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("non-finite value at element {0}")]
    NonFinite(usize),

    #[error("unknown {kind} strategy `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error(transparent)]
    Decode(#[from] DecodeError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(#[from] serde_json::Error),
}

/// Failures specific to reading token container files.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic {found:?}, expected \"TKB1\"")]
    Magic { found: [u8; 4] },

    #[error("file holds {actual} bytes but header declares {expected}")]
    Size { expected: u64, actual: u64 },

    #[error("non-finite payload value at element {index}")]
    NonFinite { index: usize },

    #[error("zero-width matrix (cols = 0)")]
    ZeroCols,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
