use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("coordinate outside projection domain (lat={lat}, lon={lon}, zone={zone})")]
    Domain { lat: f64, lon: f64, zone: u8 },

    #[error("patch feature {index}: {reason}")]
    Patch { index: usize, reason: String },

    #[error("duplicate patch id `{0}`")]
    DuplicatePatch(String),

    #[error("unknown patch id `{0}`")]
    UnknownPatch(String),

    #[error("grid would need {cells} cells (limit {limit}); use a larger cell_size")]
    GridTooLarge { cells: u64, limit: u64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(
        "optimizer did not converge after {iterations} iterations \
         (best sigma2={sigma2}, delta2={delta2}, loglik={loglik})"
    )]
    NonConvergence {
        iterations: usize,
        sigma2: f64,
        delta2: f64,
        loglik: f64,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("integration failed at step {step} (t={t}): {reason}")]
    Integration { step: usize, t: f64, reason: String },

    #[error("missing artifact {}: run `{command}` first", path.display())]
    MissingArtifact { path: PathBuf, command: &'static str },

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    /// Stable machine-readable kind, used in CLI error records and FFI codes.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Format(_) => "format",
            Error::Domain { .. } => "domain",
            Error::Patch { .. } => "patch",
            Error::DuplicatePatch(_) => "duplicate_patch",
            Error::UnknownPatch(_) => "unknown_patch",
            Error::GridTooLarge { .. } => "grid_too_large",
            Error::InsufficientData(_) => "insufficient_data",
            Error::NonConvergence { .. } => "non_convergence",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Invariant(_) => "invariant",
            Error::Integration { .. } => "integration",
            Error::MissingArtifact { .. } => "missing_artifact",
            Error::Config(_) => "config",
        }
    }
}
