use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("unsupported operation: {0}")]
    Capability(String),

    #[error("format version mismatch: expected {expected}, found {found}")]
    Version { expected: u32, found: String },

    #[error("truncated stream `{stream}`: {detail}")]
    Truncated { stream: String, detail: String },

    #[error("checksum mismatch in stream `{stream}`")]
    Checksum { stream: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("stream gap between t={start:.6}s and t={end:.6}s")]
    Gap { start: f64, end: f64 },

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
