use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("index {index} out of range for {what} of size {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{what}: expected a {expected}-channel image, got {got} channels")]
    Channel {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("dataset has no samples of class `{0}`")]
    EmptyClass(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("architecture mismatch: {0}")]
    Architecture(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error("checksum mismatch for tensor `{tensor}`")]
    Checksum { tensor: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: usize, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
