use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Symmetric factorization failed even at the largest jitter level.
    #[error("numerical failure: {message} (last jitter tried: {jitter:e})")]
    Numerical { message: String, jitter: f64 },

    #[error("optimization failed: {0}")]
    Optimization(String),

    /// A federated round failed on one client.
    #[error("round {round} failed on client {client}: {source}")]
    Round {
        round: usize,
        client: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("secure aggregation: {0}")]
    Aggregation(String),

    #[error("{}:{line}: column `{column}`: {message}", file.display())]
    Ingestion {
        file: PathBuf,
        line: u64,
        column: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
