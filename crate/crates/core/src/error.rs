use thiserror::Error;

use crate::comm::CommError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("replica mismatch in column {column}: rank {first} and rank {second} hold different values")]
    ReplicaMismatch {
        column: usize,
        first: usize,
        second: usize,
    },

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error(transparent)]
    Comm(#[from] CommError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
