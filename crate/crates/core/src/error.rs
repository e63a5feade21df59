use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("ragged row in {path} at line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        path: PathBuf,
        line: u64,
        expected: usize,
        found: usize,
    },

    #[error("label count {labels} ≠ sample count {samples}")]
    CountMismatch { labels: usize, samples: usize },

    #[error("invalid label {label} at position {index}: labels must be in 1..C")]
    InvalidLabel { index: usize, label: i64 },

    #[error("raw payload length mismatch: expected {expected} bytes, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("zero-norm column at index {index}")]
    ZeroNorm { index: usize },

    #[error("class {class_id} has no samples")]
    EmptyClass { class_id: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("matrix not positive definite: non-positive pivot {value:e} at index {pivot}")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no labeled pixels")]
    NoLabeledPixels,

    #[error("training label {train} disagrees with ground truth {truth} at ({row},{col})")]
    MaskDisagreement {
        row: usize,
        col: usize,
        train: usize,
        truth: usize,
    },

    #[error("pixel ({row},{col}): {source}")]
    Pixel {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse failure class used by front ends for exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::NotPositiveDefinite { .. }
            | Error::NoConvergence { .. }
            | Error::Numerical(_)
            | Error::ZeroNorm { .. } => ErrorKind::Numerical,
            Error::Pixel { source, .. } => source.kind(),
            _ => ErrorKind::Input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Input,
    Numerical,
}
