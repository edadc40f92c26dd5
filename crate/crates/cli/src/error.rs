use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ladx::Error),

    #[error("invalid argument: {0}")]
    Usage(String),

    #[error("input {path} changed since the recorded run")]
    InputChanged { path: PathBuf },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// Stable identifier for scripts.
    pub fn kind(&self) -> &'static str {
        use ladx::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::InputChanged { .. } => "input_changed",
            CliError::Core(e) => match e {
                E::MissingArtifact { .. } => "missing_artifact",
                E::Config(_) => "invalid_config",
                E::ChecksumMismatch => "checksum_mismatch",
                E::BadMagic | E::VersionMismatch { .. } | E::Truncated | E::Malformed(_) => "bad_checkpoint",
                E::Io { .. } => "io",
                E::Json(_) => "json",
                E::UnknownWord(_) | E::Unparseable(_) | E::Overlong { .. } | E::InvalidTokens(_) => "bad_input",
                E::ConflictingAnchor(_) | E::AnchorPosition { .. } => "bad_anchor",
                E::NonFiniteLoss { .. } => "diverged",
                _ => "internal",
            },
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind(), "message": self.to_string() } }).to_string()
    }
}
