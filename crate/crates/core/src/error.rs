use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimensionMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("length mismatch in {op}: expected {expected}, got {got}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("token index {index} out of vocabulary of size {vocab}")]
    OutOfVocab { index: usize, vocab: usize },

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scheduled decoding requires a ground-truth sequence")]
    MissingGroundTruth,

    #[error("gradient contains non-finite values")]
    NonFiniteGradient,

    #[error("empty batch")]
    EmptyBatch,

    #[error("cannot sample from an empty buffer")]
    EmptyBuffer,

    #[error("reference sequence is empty")]
    EmptyReference,

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }
}
