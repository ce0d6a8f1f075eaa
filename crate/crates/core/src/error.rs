use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no motion direction for a zero flow vector")]
    NoMotionDirection,

    #[error("cell ({cell_x}, {cell_y}) is outside the {cells_x}x{cells_y} grid")]
    CellOutOfBounds {
        cell_x: usize,
        cell_y: usize,
        cells_x: usize,
        cells_y: usize,
    },

    #[error("word id out of range: {id} >= vocabulary size {vocab_size}")]
    WordOutOfRange { id: usize, vocab_size: usize },

    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("vocabulary mismatch: model has {model} words, corpus has {corpus}")]
    VocabularyMismatch { model: usize, corpus: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("single-class labels: {0}")]
    SingleClass(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
