use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can surface. The CLI maps each variant onto a
/// process exit code through [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("{path}: bad magic, not a feature tensor file")]
    BadMagic { path: PathBuf },

    #[error("{path}: truncated payload (expected {expected} bytes, found {found})")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("stage order violation: {0}")]
    StageOrder(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 success, 2 config, 3 data, 4 stage order. Anything internal maps to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::InvalidLabel(_)
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::DimensionMismatch(_)
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Json(_) => 3,
            Error::StageOrder(_) => 4,
            Error::UndefinedMetric(_) | Error::Tensor(_) | Error::Image(_) => 1,
        }
    }
}
