//! Crate-wide error type.

use std::path::PathBuf;

use crate::generation::Method;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    /// Malformed manifest content; `line` is 1-based and counts the header.
    #[error("manifest line {line}: {message}")]
    ManifestParse { line: usize, message: String },

    #[error("manifest version {found} is not supported (expected {expected})")]
    ManifestVersion { expected: u32, found: u32 },

    /// A descriptor field violates the dataset schema.
    #[error("schema violation in `{field}`: {message}")]
    Schema { field: String, message: String },

    #[error("split `{split}` references unknown image id `{id}`")]
    DanglingSplitId { split: String, id: String },

    #[error("dataset has no `{0}` split")]
    MissingSplit(String),

    #[error("dataset already has a `val` split")]
    ValSplitExists,

    #[error("sub-class `{class}` has {have} train images but {need} are required")]
    ClassTooSmall {
        class: String,
        have: usize,
        need: usize,
    },

    #[error("train image `{id}` has no background tag")]
    UntaggedImage { id: String },

    #[error("train image `{id}` has no caption")]
    MissingCaption { id: String },

    #[error("bias rule references unknown class `{class}`")]
    UnknownClass { class: String },

    #[error("{0}")]
    Precondition(String),

    #[error("no prompts were accepted for meta-class `{meta_class}`")]
    EmptyPromptPool { meta_class: String },

    #[error("prompt pool already carries artistic suffixes")]
    PoolAlreadyStyled,

    #[error("score vector is {got:?} but {expected:?} was required")]
    WrongScoreKind {
        expected: crate::filters::ScoreKind,
        got: crate::filters::ScoreKind,
    },

    #[error("label index {index} out of range for {len} labels")]
    LabelOutOfRange { index: usize, len: usize },

    #[error("no confidence threshold for class `{class}`")]
    MissingThreshold { class: String },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("covariance is not positive semi-definite (eigenvalue {eigenvalue:.3e})")]
    NotPsd { eigenvalue: f64 },

    #[error("need at least {need} samples, got {have}")]
    TooFewSamples { have: usize, need: usize },

    #[error("unknown dataset `{name}`; pass an explicit override")]
    UnknownDataset { name: String },

    #[error("backend `{backend}` does not support method `{method}`")]
    UnsupportedMethod { backend: String, method: Method },

    #[error("backend request violates the {method} contract: {message}")]
    BackendContract { method: Method, message: String },

    #[error("backend handshake failed: {0}")]
    BackendHandshake(String),

    #[error("backend error: {message}")]
    Backend { message: String, retryable: bool },

    #[error("trainer `{trainer}` failed at epoch {epoch}: {message}")]
    TrainerFailed {
        trainer: String,
        epoch: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code for the CLI: 1 for validation problems, 2 for
    /// failures that occur while a stage is running.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { .. }
            | Error::Backend { .. }
            | Error::BackendHandshake(_)
            | Error::TrainerFailed { .. } => 2,
            _ => 1,
        }
    }
}
