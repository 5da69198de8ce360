//! Workspace-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset dimension mismatch: declared {declared}, file has {actual}")]
    DatasetDimension { declared: usize, actual: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("data quality: {0}")]
    DataQuality(String),

    #[error("windowing: {0}")]
    Windowing(String),

    #[error("unstable system: estimated spectral radius {radius:.4} exceeds 1.05")]
    UnstableSystem { radius: f64 },

    #[error("invalid spec: {0}")]
    Spec(String),

    #[error("spectral: {0}")]
    Spectral(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("training: {0}")]
    Train(String),

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
