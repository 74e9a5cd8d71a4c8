use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{what}: index {index} out of range for length {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("empty input to {0}")]
    Empty(&'static str),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unknown tag {0:?}")]
    UnknownTag(String),
    #[error("record {id:?} has no transcription")]
    MissingTranscription { id: String },
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("degenerate corpus: {0}")]
    Degenerate(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
