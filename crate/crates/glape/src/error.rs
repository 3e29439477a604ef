//! Crate-wide error type. Variants map one-to-one onto CLI exit codes.

use crate::backend::BackendError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Command line misuse (exit code 1).
    #[error("{0}")]
    Usage(String),

    /// Invalid or inconsistent configuration (exit code 2).
    #[error("config error: {0}")]
    Config(String),

    /// Backend failure that survived retries (exit code 3).
    #[error(transparent)]
    Backend(#[from] BackendError),

    /// Malformed dataset or run artifact (exit code 4).
    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Config(_) => 2,
            Error::Backend(_) => 3,
            Error::Data(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
