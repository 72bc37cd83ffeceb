use std::io;

use thiserror::Error;

/// Errors produced by the oversegmentation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller supplied an argument outside the operation's domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Tensor or array dimensions disagree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A PLY file or cache blob could not be parsed.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// A binary file carries an unexpected magic, version or configuration.
    #[error("format error: {0}")]
    Format(String),

    /// A NaN or infinity appeared where finite values are required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}

impl Error {
    pub(crate) fn parse_at_line(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: format!("line {line}"),
            message: message.into(),
        }
    }

    pub(crate) fn parse_at_byte(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            location: format!("byte offset {offset}"),
            message: message.into(),
        }
    }
}
