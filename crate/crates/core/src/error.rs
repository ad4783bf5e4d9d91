use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DockError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("curriculum stalled in phase {phase} after {episodes} episodes (trailing return {trailing_return:.3}, threshold {threshold})")]
    CurriculumStalled {
        phase: usize,
        episodes: usize,
        trailing_return: f64,
        threshold: f64,
    },
}

impl DockError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DockError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = DockError> = std::result::Result<T, E>;
