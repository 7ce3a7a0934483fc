use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Error type shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty batch")]
    EmptyBatch,
    #[error("degenerate embedding: zero norm")]
    DegenerateEmbedding,
    #[error("non-finite component in embedding")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("space mismatch: expected {expected:?}, got {got:?}")]
    SpaceMismatch {
        expected: crate::embedding::SpaceTag,
        got: crate::embedding::SpaceTag,
    },
    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("truncated payload in {path}: need {need} bytes, have {have}")]
    Truncated { path: PathBuf, need: u64, have: u64 },
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("timestep {t} out of range (T = {steps})")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("invalid step count {0}")]
    BadStepCount(usize),
    #[error("slot index {0} out of range (must be < 77)")]
    SlotOutOfRange(usize),
    #[error("duplicate slot index {0}")]
    DuplicateSlot(usize),
    #[error("unknown operator {0:?}")]
    UnknownOperator(String),
    #[error("arity mismatch for operator {operator}: expected {expected}, got {got}")]
    ArityMismatch {
        operator: String,
        expected: usize,
        got: usize,
    },
    #[error("instruct loss requires a text embedding")]
    MissingTextEmbedding,
    #[error("invalid layer index {index} (model has {layers} layers)")]
    BadLayerIndex { index: usize, layers: usize },
    #[error("nothing to train: freeze mask selects no parameters")]
    NothingToTrain,
    #[error("non-finite loss at step {step}: {loss}")]
    NonFiniteLoss { step: u64, loss: f64 },
    #[error("parse error at {line}:{col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("undefined binding {0:?}")]
    UndefinedBinding(String),
    #[error("missing checkpoint for operator {0:?}")]
    MissingCheckpoint(String),
    #[error("client error: {0}")]
    Client(String),
    #[error("renderer {renderer} does not accept option {option}")]
    UnsupportedOption { renderer: String, option: String },
    #[error("manifest not found: {0}")]
    ManifestNotFound(PathBuf),
    #[error("bad reference {0:?}")]
    BadRef(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
