use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unrecognized format: expected magic {expected:?}, found {found:?}")]
    UnrecognizedFormat { expected: String, found: String },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("truncated payload at byte offset {offset}: expected {what}")]
    Truncated { offset: usize, what: String },

    #[error("trailing bytes after payload at byte offset {offset}")]
    TrailingBytes { offset: usize },

    #[error("invalid bank: {0}")]
    InvalidBank(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient classes: need {needed}, novel split has {available}")]
    InsufficientClasses { needed: usize, available: usize },

    #[error("insufficient samples in class {class_id:?}: need {needed}, found {available}")]
    InsufficientSamples {
        class_id: String,
        needed: usize,
        available: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("negative value {value} at position {index}; the power transform needs non-negative input")]
    NegativeValue { index: usize, value: f64 },

    #[error("missing semantic vector for class {0:?}")]
    MissingSemantic(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("divergence: {0}; try a lower learning rate")]
    Divergence(String),

    #[error("covariance factorization failed (minimum eigenvalue {min_eigenvalue:e})")]
    Factorization { min_eigenvalue: f64 },

    #[error("unknown sweep parameter {0:?} (expected one of lambda, tau, alpha, p, q, resample_count)")]
    UnknownParameter(String),

    #[error("episode {index}: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_episode(self, index: usize) -> Self {
        Error::Episode {
            index,
            source: Box::new(self),
        }
    }
}
