use std::io;
use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: malformed tier (no colon after speaker code): {text:?}")]
    MalformedTier { line: usize, text: String },

    #[error("input is not valid UTF-8: {0}")]
    Decode(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("sequence length {len} exceeds the model maximum of {max}")]
    Length { len: usize, max: usize },

    #[error("non-finite loss at batch {batch}")]
    Divergence { batch: usize },

    #[error("template {test:?}: slot {slot:?} is empty after vocabulary filtering")]
    EmptySlot { test: String, slot: String },

    #[error("no candidates for class {0}")]
    EmptyClass(String),

    #[error("zero vector: {0}")]
    ZeroVector(String),

    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("checkpoint {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Shape {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
