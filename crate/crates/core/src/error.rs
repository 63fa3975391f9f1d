use thiserror::Error;

/// Errors produced by dataset loading, model fitting, and evaluation.
#[derive(Debug, Error)]
pub enum DcanError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("parse error in {path} at row {row}, col {col}: {message}")]
    Parse {
        path: String,
        row: usize,
        col: usize,
        message: String,
    },

    #[error("non-finite entry in {path} at row {row}, col {col}")]
    NonFinite { path: String, row: usize, col: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("singular covariance: {0}; increase the regularization parameter")]
    Singular(String),

    #[error("diverged parameters: {0}")]
    Diverged(String),

    #[error("model file {path} malformed at line {line}: {message}")]
    ModelFormat {
        path: String,
        line: usize,
        message: String,
    },
}

impl DcanError {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        DcanError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, DcanError>;
