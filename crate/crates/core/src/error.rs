use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the rescaling pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("format error in {field}: {message}")]
    Format { field: &'static str, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error at {}: {message}", path.display())]
    Data { path: PathBuf, message: String },

    #[error("variant mismatch: {0}")]
    VariantMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(field: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            field,
            message: message.into(),
        }
    }
}
