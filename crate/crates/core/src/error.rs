use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numeric argument outside the domain of a function (negative flow,
    /// nonpositive weight, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Mismatched vector lengths, unknown ids, dangling link endpoints.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: u64,
        message: String,
    },

    /// A record rejected during demand binning, identified by its position in
    /// the input list.
    #[error("record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("solver failure in interval {interval}: {message}")]
    Solver { interval: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn structural(msg: impl Into<String>) -> Self {
        Error::Structural(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
