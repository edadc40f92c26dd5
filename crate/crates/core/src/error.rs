use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("timestep {t} outside 1..={max}")]
    Timestep { t: usize, max: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("unknown word {0:?}")]
    UnknownWord(String),

    #[error("caption needs {needed} positions but the sequence holds {max_len}")]
    Overlong { needed: usize, max_len: usize },

    #[error("invalid token sequence: {0}")]
    InvalidTokens(String),

    #[error("latent statistics need at least {needed} captions, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("latent statistics have not been estimated")]
    MissingStats,

    #[error("caption does not parse as a scene: {0:?}")]
    Unparseable(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss at step {step}: latent {latent}, caption {caption}")]
    NonFiniteLoss { step: u64, latent: f64, caption: f64 },

    #[error("conflicting anchors at position {0}")]
    ConflictingAnchor(usize),

    #[error("anchor position {pos} outside sequence of length {max_len}")]
    AnchorPosition { pos: usize, max_len: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,

    #[error("checkpoint format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch (corrupt or truncated file)")]
    ChecksumMismatch,

    #[error("checkpoint truncated")]
    Truncated,

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("missing prerequisite {what}: {path}")]
    MissingArtifact { what: &'static str, path: PathBuf },

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
        Error::Io { path: path.into(), source }
    }
}
