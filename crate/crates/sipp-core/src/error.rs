use thiserror::Error;

/// Errors produced by the pruning library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid layer index {layer} (network has {count} layers)")]
    InvalidLayer { layer: usize, count: usize },

    #[error("invalid group index {group} for layer {layer} ({count} groups)")]
    InvalidGroup {
        layer: usize,
        group: usize,
        count: usize,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("empty sample set")]
    EmptySampleSet,

    #[error("invalid budget {budget}: {reason}")]
    BadBudget { budget: usize, reason: String },

    #[error("invalid parameter: {0}")]
    BadParameter(String),

    #[error("all sensitivities are zero; no sampling distribution")]
    ZeroSensitivities,

    #[error("cannot reach {target} unique indices from {available} positive-probability entries")]
    InfeasibleUniqueTarget { target: usize, available: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("manifest json: {0}")]
    ManifestJson(#[from] serde_json::Error),

    #[error("bad batch file: {0}")]
    BadBatchFile(String),
}

pub type Result<T> = std::result::Result<T, Error>;
