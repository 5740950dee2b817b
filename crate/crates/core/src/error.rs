use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid mask: {0}")]
    InvalidMask(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("lookup error: id {id} out of range for table with {rows} rows")]
    Lookup { id: usize, rows: usize },

    #[error("XML parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("POS alignment error for sentence {id}: {message}")]
    Alignment { id: String, message: String },

    #[error("sentence is empty after cleaning")]
    EmptySentence,

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFinite(String),

    #[error("vocabulary hash mismatch: checkpoint {expected}, corpus {found}")]
    VocabMismatch { expected: String, found: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
