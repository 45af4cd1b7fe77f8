use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index {index} out of range for {what} (limit {limit})")]
    Range {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("depth error: {0}")]
    Depth(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },
    #[error("stream failed at chunk {chunk}: {source}")]
    Stream {
        chunk: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed data: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn range(what: &'static str, index: usize, limit: usize) -> Self {
        Error::Range { what, index, limit }
    }
}
