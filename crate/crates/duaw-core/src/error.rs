//! Error type shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DuawError {
    #[error("shape mismatch: {context}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("numerical failure (non-finite value) at step {step}: {context}")]
    NonFinite { step: usize, context: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("malformed container: {0}")]
    Container(String),
}

pub type Result<T> = std::result::Result<T, DuawError>;

impl DuawError {
    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> Self {
        DuawError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
