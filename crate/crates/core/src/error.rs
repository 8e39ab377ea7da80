use std::path::PathBuf;

use thiserror::Error;

use crate::corpus::Span;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("sentence {id}: {msg}")]
    Data { id: String, msg: String },
    #[error("span {span} is out of bounds for a sequence of length {len}")]
    SpanOutOfBounds { span: Span, len: usize },
    #[error("spans {first} and {second} overlap")]
    Overlap { first: Span, second: Span },
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty span cannot be averaged")]
    EmptySpan,
    #[error("duplicate triplet for sentence {id} on the {side} side")]
    DuplicateTriplet { id: String, side: &'static str },
    #[error("sentence {id} has {len} tokens, the encoder accepts at most {max}")]
    TooLong { id: String, len: usize, max: usize },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("encoder backend: {0}")]
    Backend(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn data(id: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Data {
            id: id.into(),
            msg: msg.into(),
        }
    }
}
