//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    /// Malformed inputs: missing columns, bad headers, unusable config values.
    #[error("schema error: {0}")]
    Schema(String),

    /// Inputs that parse but violate a data invariant (label range, mapping
    /// gaps, empty sets where records are required).
    #[error("data validation error: {0}")]
    Data(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A NaN or infinity surfaced from a numeric operation.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
