use crate::ndcore::NdError;
use thiserror::Error;

/// Crate-wide error for everything above the tensor layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
