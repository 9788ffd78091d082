use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: duplicate example id `{id}`")]
    DuplicateExample { line: usize, id: String },

    #[error("unknown class `{0}`")]
    UnknownClass(String),

    #[error("class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange { index: usize, num_classes: usize },

    #[error("line {line}: feature dimension {found} differs from {expected}")]
    FeatureDimension {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid label space: {0}")]
    InvalidLabelSpace(String),

    #[error("unknown example `{0}`")]
    UnknownExample(String),

    #[error("unknown labeling function `{0}`")]
    UnknownLf(String),

    #[error("labeling function `{0}` is discarded")]
    DiscardedLf(String),

    #[error("labeling function `{0}` is already registered")]
    DuplicateLf(String),

    #[error("invalid pattern for rule `{rule}`: {message}")]
    InvalidPattern { rule: String, message: String },

    #[error("no co-labeled examples")]
    NoCoLabeled,

    #[error("need at least 2 raters, got {0}")]
    TooFewRaters(usize),

    #[error("label matrix has no votes")]
    EmptyMatrix,

    #[error("non-finite log-likelihood at iteration {0} (smoothing too small for empty counts?)")]
    NonFiniteLikelihood(usize),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("example `{0}` has no gold label")]
    MissingGold(String),

    #[error("class `{class}` has {available} gold examples, {requested} requested")]
    InsufficientSupport {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("example `{0}` was not issued in the current round")]
    NotIssued(String),

    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),

    #[error("current batch has {0} unlabeled items")]
    BatchIncomplete(usize),

    #[error("replay diverged at round {round}: {message}")]
    ReplayMismatch { round: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
