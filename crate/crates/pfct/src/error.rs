//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PfctError>;

#[derive(Debug, Error)]
pub enum PfctError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl PfctError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        PfctError::InvalidArgument(msg.into())
    }
}
