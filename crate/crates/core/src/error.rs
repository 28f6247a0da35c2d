use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible checkpoints at tensor `{name}`: {reason}")]
    IncompatibleCheckpoints { name: String, reason: String },

    #[error("alpha {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),

    #[error("tensor `{name}`: {reason}")]
    InvalidTensor { name: String, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: u64, message: String },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("stratum `{stratum}` has {size} examples, fewer than k = {k}")]
    StratumTooSmall { stratum: String, size: usize, k: usize },

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("language `{0}` is missing from the corpus")]
    MissingLanguage(String),

    #[error("expected only `{expected}` examples, found `{found}`")]
    LanguageMismatch { expected: String, found: String },

    #[error("unknown language `{0}`")]
    UnknownLanguage(String),

    #[error("length mismatch: {golds} gold labels vs {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },

    #[error("label vocabulary mismatch: {0}")]
    LabelVocabularyMismatch(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that are a bug in this crate rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Internal(_))
    }
}
