use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the docid construction and retrieval pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{0} is empty")]
    Empty(String),

    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),

    #[error("duplicate docid string {docid:?} (doc {doc_id:?})")]
    DuplicateDocid { doc_id: String, docid: String },

    #[error("document {0:?} has no tokens to embed")]
    EmptyDocument(String),

    #[error("unknown document {0:?}")]
    UnknownDocument(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got} for {id:?}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        got: usize,
    },

    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),

    #[error("docid {docid:?} does not round-trip through the tokenizer (got {got:?})")]
    NotInvertible { docid: String, got: String },

    #[error("scorer violated the allowed-set contract: {0}")]
    ScorerContract(String),

    #[error("rewriter produced an invalid phrase for node {node}: {message}")]
    Rewriter { node: String, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
