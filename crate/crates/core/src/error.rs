use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    DimensionMismatch {
        expected: usize,
        actual: usize,
        context: &'static str,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("missing running statistics in batch-norm layer {layer}")]
    MissingRunningStats { layer: usize },

    #[error("backward called without a forward cache")]
    MissingCache,

    #[error("unknown {kind} `{name}` (known: {known})")]
    UnknownName {
        kind: &'static str,
        name: String,
        known: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("lut format error: {0}")]
    LutFormat(String),

    #[error("unsupported lut version {0}")]
    LutVersion(u32),

    #[error("lut header truncated: {0} bytes, need 72")]
    LutTruncated(usize),

    #[error("lut payload size mismatch: header implies {expected} bytes, found {actual}")]
    LutSizeMismatch { expected: u64, actual: u64 },

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
