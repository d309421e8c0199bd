//! Crate-wide error type. Every fallible public operation returns
//! [`Result`]; panics are reserved for internal logic bugs.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("points must be strictly increasing: {0}")]
    UnsortedPoints(String),

    #[error("class {0} is not present")]
    MissingClass(u32),

    #[error("index {index} out of range (size {size})")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("transform is not an involution: point {index} returns with error {error:e}")]
    NotInvolution { index: usize, error: f64 },

    #[error("not enough pairs: need {required}, have {available}")]
    InsufficientPairs { required: usize, available: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{}: {what} at byte {offset}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        what: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
