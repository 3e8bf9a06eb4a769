//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration or invalid argument value.
    #[error("configuration error: {0}")]
    Config(String),

    /// Failure while reading or parsing an input dataset.
    #[error("ingestion error: {0}")]
    Ingest(String),

    /// Tensor or statevector dimension disagreement.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite values, diverging loss, or similar numeric breakdown.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI contract: 1 config, 2 i/o, 3 numerical.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Shape(_) => 1,
            Error::Ingest(_) | Error::Io { .. } => 2,
            Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
