use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid record: {0}")]
    Validation(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("embedding table for {modality} cannot shrink from {old} to {new} rows")]
    Shrink {
        modality: &'static str,
        old: usize,
        new: usize,
    },

    #[error("snapshot error at byte offset {offset}: {msg}")]
    Snapshot { offset: u64, msg: String },

    #[error("non-finite value in {modality} row {row}")]
    NonFinite { modality: &'static str, row: usize },

    #[error("record has {0} unit(s); intra-agreement needs at least two")]
    TooFewUnits(usize),

    #[error("buffer is empty")]
    EmptyBuffer,

    #[error("distribution is empty")]
    EmptyDistribution,

    #[error("record has no region and the context requires one")]
    MissingRegion,

    #[error("target unit is not part of the record")]
    TargetNotInRecord,

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn snapshot(offset: u64, msg: impl Into<String>) -> Self {
        Error::Snapshot {
            offset,
            msg: msg.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
