use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("label space needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("invalid class name {0:?} (empty or duplicated)")]
    InvalidClassName(String),
    #[error("line {line}: duplicate example id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: label {label:?} is not in the label space")]
    UnknownLabelAt { label: String, line: usize },
    #[error("line {line}: example text is empty")]
    EmptyTextAt { line: usize },
    #[error("line {line}: inconsistent label history: {reason}")]
    BadHistory { line: usize, reason: &'static str },
    #[error("label {0:?} is not in the label space")]
    UnknownLabel(String),
    #[error("unknown example id {0:?}")]
    UnknownId(String),
    #[error("example {0:?} has no oracle label")]
    MissingOracleLabel(String),
    #[error("split with test fraction {fraction} of {n} examples leaves an empty side")]
    DegenerateSplit { n: usize, fraction: f64 },
    #[error("text has no tokens")]
    EmptyText,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("class index {index} out of range for {num_classes} classes")]
    ClassOutOfRange { index: usize, num_classes: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid sparse vector: {0}")]
    InvalidVector(&'static str),
    #[error("need at least {needed} examples, got {got}")]
    TooFewExamples { needed: usize, got: usize },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("{what} fingerprint mismatch: model has {model:016x}, input has {input:016x}")]
    FingerprintMismatch { what: &'static str, model: u64, input: u64 },
    #[error("model kind mismatch: expected {expected}, got {actual}")]
    KindMismatch { expected: &'static str, actual: &'static str },
    #[error("Model-A must train with early_stop_fraction > 0 so it does not overfit the noisy labels")]
    ModelAMayOverfit,
    #[error("evaluation needs at least one item")]
    EmptyEvaluation,
    #[error("invalid model parameters: {0}")]
    InvalidModel(&'static str),
}
