use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PdaError>;

#[derive(Debug, Error)]
pub enum PdaError {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    /// Shapes or keys do not agree with each other.
    #[error("schema error: {0}")]
    Schema(String),

    /// Values are present but unusable (NaN, out-of-range labels, ...).
    #[error("data error: {0}")]
    Data(String),

    /// The on-disk encoding is not one we accept.
    #[error("format error: {0}")]
    Format(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl PdaError {
    /// Wraps an I/O failure on `path`; a missing file becomes [`PdaError::NotFound`].
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            PdaError::NotFound(path)
        } else {
            PdaError::Io { path, source }
        }
    }
}
