use std::io;

use thiserror::Error;

use crate::model::FieldId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("feature {feature} out of range for field {field} with {len} rows")]
    FeatureOutOfRange { field: u32, feature: u32, len: usize },

    #[error("mask value {mask} out of range for codebook of field {field} with k={k}")]
    MaskOutOfRange { field: u32, mask: u32, k: usize },

    #[error("field {0} not present in model")]
    UnknownField(FieldId),

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("insufficient input: need at least {needed} rows, got {available}")]
    InsufficientInput { needed: usize, available: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("AUC undefined: need at least one positive and one negative label")]
    UndefinedAuc,

    #[error("empty input")]
    EmptyInput,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for errors caused by rejected configuration rather than runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
