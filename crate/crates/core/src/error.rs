//! Error type shared by every module in the engine.

use thiserror::Error;

/// Engine-wide error enum. The CLI maps [`Error::Config`] and [`Error::Usage`]
/// to exit code 2 and everything else to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Bad configuration value or an input too small for the configuration.
    #[error("config error: {0}")]
    Config(String),

    /// API misuse: calling an operation before its preconditions hold.
    #[error("usage error: {0}")]
    Usage(String),

    /// Numeric failure: non-finite inputs or a solver that did not converge.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed input data; carries the 1-based row number when known.
    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
