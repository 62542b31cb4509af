use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schedule construction: {0}")]
    Schedule(String),

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown condition `{0}`")]
    UnknownCondition(String),

    #[error("missing context field `{field}` required by {kind}")]
    MissingContext { kind: &'static str, field: &'static str },

    #[error("non-finite gradient at primitive {index} ({param})")]
    NanGradient { index: usize, param: &'static str },

    #[error("missing source-branch cache: {0}")]
    MissingSourceCache(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// The I/O error is folded into the message, not chained.
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },

    #[error("image encoding: {0}")]
    Image(String),
}

impl Error {
    pub fn shape(expected: &[usize], actual: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            err: source,
        }
    }
}
