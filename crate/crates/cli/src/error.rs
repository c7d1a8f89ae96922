use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] stochmpc_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("missing artefact {}", .0.display())]
    Missing(PathBuf),

    #[error("malformed artefact {}: {reason}", file.display())]
    Malformed { file: PathBuf, reason: String },

    #[error("mixed provenance: {} carries config hash {found}, expected {expected}", file.display())]
    Provenance { file: PathBuf, found: String, expected: String },

    #[error("surrogate validation failed after retry: '{target}' worst steady-window relative error {error:.4} exceeds {tolerance}")]
    Validation { target: String, error: f64, tolerance: f64 },
}

pub type CliResult<T> = std::result::Result<T, CliError>;
