use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric positive-definite (pivot {pivot:e} at row {row})")]
    NotSpd { row: usize, pivot: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid parameters: {0}")]
    BadParams(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("need at least {needed} sweep rows, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("bad IDX magic number {0:#010x}")]
    BadMagic(u32),

    #[error("truncated IDX file: {0}")]
    TruncatedFile(String),

    #[error("evaluation set is empty or unbalanced")]
    EmptyEval,

    #[error("image batch is empty")]
    EmptyBatch,

    #[error("RBF width must be positive, got {0}")]
    BadWidth(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing artifacts in {}: {what}", dir.display())]
    MissingArtifacts { dir: PathBuf, what: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::ShapeMismatch {
            context,
            expected,
            actual,
        }
    }
}
