use std::io;
use std::path::PathBuf;

use crate::VectorId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector has a non-finite coordinate at position {0}")]
    NonFinite(usize),

    #[error("vector id {0} not found")]
    NotFound(VectorId),

    #[error("self-loop edge on {0} rejected")]
    SelfLoop(VectorId),

    #[error("hash code length mismatch: {0} vs {1}")]
    CodeLength(usize, usize),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("parse error at record {record} (byte offset {offset}): {reason}")]
    Parse {
        record: usize,
        offset: u64,
        reason: String,
    },

    #[error("permutation is not a bijection over live ids: {0}")]
    NotBijective(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParam(msg.into())
    }
}
