use std::path::PathBuf;

/// Errors produced anywhere in the enhancement pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("input too short: {len} samples, need at least {need}")]
    InputTooShort { len: usize, need: usize },

    #[error("inconsistent STFT metadata: {0}")]
    StftMetadata(String),

    #[error("unsupported wav format: {0}")]
    WavFormat(String),

    #[error("wav i/o on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("non-finite value produced by {op}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { op: &'static str, step: Option<usize> },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParameter(String),

    #[error("mask domain mismatch: expected {expected}, got {got}")]
    MaskDomain {
        expected: &'static str,
        got: &'static str,
    },

    #[error("unknown model variant `{0}`")]
    UnknownVariant(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint format version mismatch: file has {found}, reader supports {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("corrupt checkpoint: {0}")]
    Checkpoint(String),

    #[error("silent signal: {0}")]
    Silent(&'static str),

    #[error("training diverged at step {step}: loss {loss}, parameter norms {norms}")]
    Diverged { step: usize, loss: f64, norms: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
