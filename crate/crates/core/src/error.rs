use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },

    #[error("fully masked slice at {location}")]
    FullyMasked { location: String },

    #[error("index {index} out of range for table with {size} rows")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("invalid position {position}: learned encoding needs an integer in [0, {max})")]
    InvalidPosition { position: f64, max: usize },

    #[error("unknown activation `{0}` (valid kinds: relu, tanh, gelu)")]
    UnknownActivation(String),

    #[error("unknown attention method `{name}` (registered: {registered})")]
    UnknownAttentionMethod { name: String, registered: String },

    #[error("attention method `{0}` is already registered")]
    DuplicateAttentionMethod(String),

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("every target position is ignored; loss is undefined")]
    AllTargetsIgnored,

    #[error("sequence length {len} exceeds the maximum context window of {max} tokens")]
    ContextOverflow { len: usize, max: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("search space exhausted")]
    SearchSpaceExhausted,

    #[error("non-finite loss or parameters at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }
}
