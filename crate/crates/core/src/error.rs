//! Error type shared by every module of the crate.

use thiserror::Error;

/// Unified error for file formats, parameter validation and shape checks.
#[derive(Debug, Error)]
pub enum Error {
    /// A byte stream does not decode as the named container format.
    #[error("{format} format error: {message}")]
    Format {
        /// Container name ("MBS1", "SPL1", "CMK1", "PGM", "CSV").
        format: &'static str,
        message: String,
    },

    /// A numeric argument is outside its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Array lengths or image dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration file or override is malformed or inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An I/O failure annotated with the path it happened on.
    #[error("{path}: {source}")]
    IoAt {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }

    pub fn dims(message: impl Into<String>) -> Self {
        Error::DimensionMismatch(message.into())
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }

    pub fn io_at(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::IoAt {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
