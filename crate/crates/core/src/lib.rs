//! Koopman-operator anomaly detection for multivariate time series.
//!
//! The pipeline: split each lookback window into time-invariant and
//! time-variant frequency components, lift both through GRU-learned
//! observable functions, advance the observables with learnable linear
//! Koopman operators, and score anomalies by next-step prediction error
//! against a percentile-calibrated threshold.

pub mod data;
pub mod detect;
pub mod encoder;
pub mod error;
pub mod koopman;
pub mod mat;
pub mod model;
pub mod scalar;
pub mod spectral;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
pub use mat::Mat;
pub use scalar::Scalar;

/// Production scalar width; checkpoints store this type bit-exactly.
pub type DefaultScalar = f32;

pub type Mat32 = Mat<f32>;
pub type Mat64 = Mat<f64>;
pub type ModelState32 = model::ModelState<f32>;
pub type ModelState64 = model::ModelState<f64>;
