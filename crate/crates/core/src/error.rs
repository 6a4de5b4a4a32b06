use std::path::PathBuf;

use crate::eventsim::AevtError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("event container: {0}")]
    Aevt(#[from] AevtError),

    #[error("malformed image file {path:?}: {reason}")]
    BadImageFile {
        path: Option<PathBuf>,
        reason: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at iteration {iter} (stage {stage}): {reason}")]
    Divergence {
        stage: u8,
        iter: usize,
        reason: String,
    },

    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(String),

    #[error("capture error: {0}")]
    Capture(String),

    #[error("i/o error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
