//! Resolved run configuration: JSON file merged with CLI overrides, fully
//! validated before any compute. Unknown keys are rejected so a stale or
//! misspelled config fails loudly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use koopdetect::data::{DataFormat, DatasetSpec};
use koopdetect::error::{Error, Result};
use koopdetect::model::ModelConfig;
use koopdetect::train::TrainConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    /// Percentage of calibration points the threshold should flag.
    #[serde(default = "default_r")]
    pub r: f64,
    #[serde(default = "default_point_adjust")]
    pub point_adjust: bool,
    /// Read the percentile equation literally (r-th percentile) instead of
    /// the calibrated (100 - r)-th.
    #[serde(default)]
    pub literal_percentile: bool,
}

fn default_r() -> f64 {
    0.5
}
fn default_point_adjust() -> bool {
    true
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            r: default_r(),
            point_adjust: default_point_adjust(),
            literal_percentile: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Stamped with the crate version when a manifest is written; accepted
    /// on input so a run manifest is itself a valid config.
    #[serde(default)]
    pub version: Option<String>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// CLI flags that override file values.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambda: Option<f64>,
    pub r: Option<f64>,
    pub window: Option<usize>,
    pub no_point_adjust: bool,
    pub data_path: Option<PathBuf>,
    pub format: Option<DataFormat>,
    pub dims: Option<usize>,
    pub val_fraction: Option<f64>,
    pub test_fraction: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(alpha) = o.alpha {
            self.model.alpha = alpha;
        }
        if let Some(beta) = o.beta {
            self.model.beta = beta;
        }
        if let Some(lambda) = o.lambda {
            self.model.lambda = lambda;
        }
        if let Some(r) = o.r {
            self.detection.r = r;
        }
        if let Some(window) = o.window {
            self.model.window = window;
        }
        if o.no_point_adjust {
            self.detection.point_adjust = false;
        }
        if let Some(p) = &o.data_path {
            self.dataset.path = p.clone();
        }
        if let Some(f) = o.format {
            self.dataset.format = f;
        }
        if let Some(d) = o.dims {
            self.dataset.dims = d;
        }
        if let Some(v) = o.val_fraction {
            self.dataset.val_fraction = v;
        }
        if let Some(t) = o.test_fraction {
            self.dataset.test_fraction = t;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.m != self.dataset.dims {
            return Err(Error::Config(format!(
                "model.m = {} does not match dataset.dims = {}",
                self.model.m, self.dataset.dims
            )));
        }
        if !(0.0 < self.detection.r && self.detection.r < 100.0) {
            return Err(Error::Config(format!(
                "detection.r = {} outside (0, 100)",
                self.detection.r
            )));
        }
        Ok(())
    }

    /// Write the fully resolved config (the run manifest); feeding it back
    /// through `--config` reproduces the run.
    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let mut stamped = self.clone();
        stamped.version = Some(env!("CARGO_PKG_VERSION").to_string());
        let json = serde_json::to_string_pretty(&stamped)
            .map_err(|e| Error::Config(format!("manifest serialization: {e}")))?;
        fs::write(path, json)?;
        Ok(())
    }
}
