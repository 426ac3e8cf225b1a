use alloc::string::String;

/// Errors raised by the core pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("protocol line {line}: expected 5 fields, found {found}")]
    ProtocolFieldCount { line: usize, found: usize },
    #[error("protocol line {line}: unknown key token `{token}`")]
    UnknownKey { line: usize, token: String },
    #[error("protocol line {line}: duplicate utterance id `{utt_id}`")]
    DuplicateUtterance { line: usize, utt_id: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("clip too short: {len} samples, need at least {need}")]
    ClipTooShort { len: usize, need: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("unknown system id `{0}` for this label space")]
    UnknownLabel(String),
    #[error("backward called twice on the same tape")]
    BackwardTwice,
    #[error("backward needs a scalar loss, got {0} elements")]
    NonScalarLoss(usize),
    #[error("loss does not depend on any trainable tensor")]
    DetachedGraph,
    #[error("both bonafide and spoof trials are required")]
    SingleClass,
    #[error("t-DCF coefficients must be positive (C1 = {c1}, C2 = {c2})")]
    NonPositiveCost { c1: f64, c2: f64 },
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error("calibration did not converge in {iterations} iterations (objective {objective})")]
    NoConvergence { iterations: usize, objective: f64 },
    #[error("empty input: {0}")]
    Empty(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
}

pub type Result<T> = core::result::Result<T, Error>;
