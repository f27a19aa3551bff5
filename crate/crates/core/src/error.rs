use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid header {path}: field `{field}`: {reason}")]
    Header {
        path: PathBuf,
        field: String,
        reason: String,
    },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("singular affine: {0}")]
    SingularAffine(String),
    #[error("non-finite data: {0}")]
    NonFinite(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
