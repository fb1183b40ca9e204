use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed metadata in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty ROI: mask has no foreground voxels")]
    EmptyRoi,
    #[error("degenerate balance: {0}")]
    DegenerateBalance(String),
    #[error("empty mask: {0}")]
    EmptyMask(String),
    #[error("problem too large for exact evaluation ({0}); use mean_field")]
    TooLarge(String),
    #[error("checkpoint config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
