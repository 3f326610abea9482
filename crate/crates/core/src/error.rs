use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid sequence: {0}")]
    InvalidSequence(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("target out of range: {0}")]
    Target(String),

    #[error("oracle input too long for exhaustive search: |y|={y_len}, |y*|={ref_len} (max {max})")]
    BruteForceBound {
        y_len: usize,
        ref_len: usize,
        max: usize,
    },

    #[error("line count mismatch: {left} has {left_lines} lines, {right} has {right_lines}")]
    LineMismatch {
        left: String,
        left_lines: usize,
        right: String,
        right_lines: usize,
    },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("shape mismatch in block `{block}`: expected {expected:?}, found {found:?}")]
    Shape {
        block: String,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{msg}")]
    Metric { msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
