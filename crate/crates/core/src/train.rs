//! Optimization loop with early stopping, plus checkpoint persistence.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_windows, DatasetSplit, WindowBatch};
use crate::detect::{score_windows, ScoreSeries};
use crate::encoder::Mode;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::model::{Gradients, ModelState};
use crate::scalar::Scalar;
use crate::spectral::FrequencySelection;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grad_clip: Option<f64>,
}

fn default_lr() -> f64 {
    1e-2
}
fn default_batch() -> usize {
    128
}
fn default_epochs() -> usize {
    50
}
fn default_patience() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if c <= 0.0 {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub stopped_early: bool,
}

/// Best-validation model plus training metadata; what gets persisted.
#[derive(Clone, Debug)]
pub struct Checkpoint<S> {
    pub state: ModelState<S>,
    pub epoch: usize,
    pub val_loss: Option<f64>,
    pub seed: u64,
}

struct Adam<S> {
    m: Vec<Mat<S>>,
    v: Vec<Mat<S>>,
    t: u32,
}

impl<S: Scalar> Adam<S> {
    fn new(state: &ModelState<S>) -> Self {
        let mut m = Vec::new();
        state.visit_params(&mut |_, p| m.push(Mat::zeros(p.rows(), p.cols())));
        let v = m.clone();
        Adam { m, v, t: 0 }
    }

    fn step(&mut self, state: &mut ModelState<S>, grads: &Gradients<S>, lr: f64) {
        self.t += 1;
        let b1 = S::of(ADAM_BETA1);
        let b2 = S::of(ADAM_BETA2);
        let eps = S::of(ADAM_EPS);
        let lr = S::of(lr);
        let bias1 = S::one() - S::of(ADAM_BETA1.powi(self.t as i32));
        let bias2 = S::one() - S::of(ADAM_BETA2.powi(self.t as i32));
        let (ms, vs) = (&mut self.m, &mut self.v);
        state.apply_update(|i, p| {
            let g = &grads.slots[i];
            let m = &mut ms[i];
            let v = &mut vs[i];
            for ((pv, &gv), (mv, vv)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mv = b1 * *mv + (S::one() - b1) * gv;
                *vv = b2 * *vv + (S::one() - b2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

fn clip_gradients<S: Scalar>(grads: &mut Gradients<S>, max_norm: f64) {
    let total: S = grads
        .slots
        .iter()
        .map(|g| g.sum_squares())
        .sum::<S>()
        .sqrt();
    let limit = S::of(max_norm);
    if total > limit && total > S::zero() {
        let scale = limit / total;
        for g in grads.slots.iter_mut() {
            g.scale_assign(scale);
        }
    }
}

/// Attach the training position to an error without double-wrapping its
/// kind.
fn at_step(e: Error, epoch: usize, batch: Option<usize>) -> Error {
    let place = match batch {
        Some(b) => format!("epoch {epoch}, batch {b}"),
        None => format!("epoch {epoch}, validation"),
    };
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("{place}: {msg}")),
        other => Error::Numerical(format!("{place}: {other}")),
    }
}

fn step_seed(base: u64, epoch: usize, batch: usize) -> u64 {
    base.wrapping_mul(0x9E3779B97F4A7C15)
        .wrapping_add((epoch as u64) << 32)
        .wrapping_add(batch as u64)
}

/// Run the optimization loop and return the best-validation checkpoint with
/// per-epoch loss curves. `max_epochs == 0` returns the initial state
/// untouched with an empty report.
pub fn train<S: Scalar>(
    state: ModelState<S>,
    split: &DatasetSplit<S>,
    cfg: &TrainConfig,
) -> Result<(Checkpoint<S>, TrainReport)> {
    cfg.validate()?;
    let window_len = state.config.window;
    if split.train.len() < window_len {
        return Err(Error::Train(format!(
            "train partition ({} points) has no full window of length {window_len}",
            split.train.len()
        )));
    }
    let train_batch = make_windows(&split.train, window_len)?;
    let val_batch = make_windows(&split.val, window_len).map_err(|_| {
        Error::Train(format!(
            "validation partition ({} points) has no full window of length {window_len}",
            split.val.len()
        ))
    })?;

    let mut report = TrainReport::default();
    if cfg.max_epochs == 0 {
        let checkpoint = Checkpoint {
            state,
            epoch: 0,
            val_loss: None,
            seed: cfg.seed,
        };
        return Ok((checkpoint, report));
    }

    let mut state = state;
    let mut adam = Adam::new(&state);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xA5A5_5A5A));
    let mut best: Option<(f64, ModelState<S>, usize)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train_batch.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let windows: Vec<Mat<S>> = chunk
                .iter()
                .map(|&i| train_batch.windows[i].clone())
                .collect();
            let seed = step_seed(cfg.seed, epoch, batch_idx);
            let (loss, mut grads) = state
                .batch_loss_grad(&windows, Mode::Train, seed)
                .map_err(|e| Error::Numerical(format!("epoch {epoch}, batch {batch_idx}: {e}")))?;
            if let Some(max_norm) = cfg.grad_clip {
                clip_gradients(&mut grads, max_norm);
            }
            adam.step(&mut state, &grads, cfg.learning_rate);
            epoch_loss += loss.total.to_f64_lossy() * windows.len() as f64;
            seen += windows.len();
        }
        let train_loss = epoch_loss / seen as f64;

        let val_loss = state
            .batch_loss(&val_batch.windows, Mode::Eval, 0)
            .map_err(|e| at_step(e, epoch, None))?
            .total
            .to_f64_lossy();

        report.epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, state.clone(), epoch));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }

    let (best_val, best_state, best_epoch) = best.expect("at least one epoch ran");
    report.best_epoch = Some(best_epoch);
    report.best_val_loss = Some(best_val);
    let checkpoint = Checkpoint {
        state: best_state,
        epoch: best_epoch,
        val_loss: Some(best_val),
        seed: cfg.seed,
    };
    Ok((checkpoint, report))
}

/// Raw per-step prediction errors on the validation windows, in time order,
/// without boundary fill (length sums to windows x (L - 1)).
pub fn evaluate_val_errors<S: Scalar>(
    state: &ModelState<S>,
    val_windows: &WindowBatch<S>,
) -> Result<ScoreSeries<S>> {
    score_windows(state, val_windows, false)
}

// ---------------------------------------------------------------------------
// Checkpoint persistence: a manifest plus one little-endian binary file per
// named parameter.

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
struct Manifest<S: Scalar> {
    version: u32,
    dtype: String,
    seed: u64,
    epoch: usize,
    val_loss: Option<f64>,
    config: crate::model::ModelConfig,
    selection: FrequencySelection<S>,
    params: Vec<ParamEntry>,
}

fn file_name(param: &str) -> String {
    format!("{}.bin", param.replace('.', "_"))
}

pub fn save_checkpoint<S: Scalar>(dir: &Path, checkpoint: &Checkpoint<S>) -> Result<()> {
    let arrays = dir.join("arrays");
    fs::create_dir_all(&arrays)?;
    let mut params = Vec::new();
    let mut failure: Option<Error> = None;
    checkpoint.state.visit_params(&mut |name, mat| {
        if failure.is_some() {
            return;
        }
        let file = file_name(&name);
        let mut bytes = Vec::with_capacity(mat.data().len() * S::WIDTH);
        for &x in mat.data() {
            x.write_le(&mut bytes);
        }
        if let Err(e) = fs::write(arrays.join(&file), bytes) {
            failure = Some(e.into());
            return;
        }
        params.push(ParamEntry {
            name,
            rows: mat.rows(),
            cols: mat.cols(),
            file,
        });
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        dtype: S::DTYPE.to_string(),
        seed: checkpoint.seed,
        epoch: checkpoint.epoch,
        val_loss: checkpoint.val_loss,
        config: checkpoint.state.config.clone(),
        selection: checkpoint.state.selection.clone(),
        params,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(dir: &Path) -> Result<Checkpoint<S>> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    let manifest: Manifest<S> = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {}",
            manifest.version
        )));
    }
    if manifest.dtype != S::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint dtype {} does not match requested {}",
            manifest.dtype,
            S::DTYPE
        )));
    }

    // Build a state with the right shapes, then overwrite every array.
    let mut state = ModelState::init(
        manifest.config.clone(),
        manifest.selection.clone(),
        manifest.seed,
    )?;
    let arrays = dir.join("arrays");
    let by_name: std::collections::HashMap<&str, &ParamEntry> = manifest
        .params
        .iter()
        .map(|p| (p.name.as_str(), p))
        .collect();
    let mut failure: Option<Error> = None;
    state.visit_params_mut(&mut |name, mat| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = by_name.get(name.as_str()) else {
            failure = Some(Error::Checkpoint(format!("missing parameter {name}")));
            return;
        };
        if (entry.rows, entry.cols) != mat.shape() {
            failure = Some(Error::Checkpoint(format!(
                "parameter {name} has shape {}x{}, expected {}x{}",
                entry.rows,
                entry.cols,
                mat.rows(),
                mat.cols()
            )));
            return;
        }
        let bytes = match fs::read(arrays.join(&entry.file)) {
            Ok(b) => b,
            Err(e) => {
                failure = Some(e.into());
                return;
            }
        };
        if bytes.len() != mat.data().len() * S::WIDTH {
            failure = Some(Error::Checkpoint(format!(
                "parameter {name}: file holds {} bytes, expected {}",
                bytes.len(),
                mat.data().len() * S::WIDTH
            )));
            return;
        }
        for (i, x) in mat.data_mut().iter_mut().enumerate() {
            *x = S::read_le(&bytes[i * S::WIDTH..(i + 1) * S::WIDTH]);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Checkpoint {
        state,
        epoch: manifest.epoch,
        val_loss: manifest.val_loss,
        seed: manifest.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_from_series;
    use crate::model::{ModelConfig, NormFlags};
    use crate::spectral::fit_dominant_spectrum;
    use crate::synth::gen_sine_mixture;

    fn fixture(seed: u64) -> (ModelState<f32>, DatasetSplit<f32>) {
        let window = 16;
        let series = gen_sine_mixture::<f32>(
            &[(2.0, 1.0, 0.0), (5.0, 0.4, 0.8)],
            window,
            40,
            1,
            0.05,
            seed,
        )
        .unwrap();
        let total = series.len();
        let test = series.slice(total - 4 * window, total);
        let train_full = series.slice(0, total - 4 * window);
        let split = split_from_series(train_full, None, test, 0.2).unwrap();

        let mut cfg = ModelConfig::new(1, 0.2, 0.1, 1e-3);
        cfg.window = window;
        cfg.q = 4;
        cfg.hidden1 = 8;
        cfg.hidden2 = 6;
        let train_windows = make_windows(&split.train, window).unwrap();
        let selection = fit_dominant_spectrum(&train_windows, 0.2).unwrap();
        let state = ModelState::init(cfg, selection, seed).unwrap();
        (state, split)
    }

    #[test]
    fn zero_epochs_is_a_noop() {
        let (state, split) = fixture(1);
        let before: Vec<u32> = collect_bits(&state);
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let (checkpoint, report) = train(state, &split, &cfg).unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(collect_bits(&checkpoint.state), before);
    }

    fn collect_bits(state: &ModelState<f32>) -> Vec<u32> {
        let mut bits = Vec::new();
        state.visit_params(&mut |_, m| bits.extend(m.data().iter().map(|x| x.to_bits())));
        bits
    }

    #[test]
    fn training_reduces_loss_on_the_fixture() {
        let (state, split) = fixture(3);
        let cfg = TrainConfig {
            learning_rate: 5e-3,
            batch_size: 8,
            max_epochs: 6,
            patience: 10,
            seed: 3,
            grad_clip: None,
        };
        let (_, report) = train(state, &split, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 6);
        let first = report.epochs[0].train_loss;
        let last = report.epochs[5].train_loss;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn fixed_seed_reproduces_loss_curves() {
        let (state_a, split) = fixture(7);
        let (state_b, _) = fixture(7);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 8,
            max_epochs: 4,
            patience: 10,
            seed: 7,
            grad_clip: Some(5.0),
        };
        let (ck_a, rep_a) = train(state_a, &split, &cfg).unwrap();
        let (ck_b, rep_b) = train(state_b, &split, &cfg).unwrap();
        for (a, b) in rep_a.epochs.iter().zip(&rep_b.epochs) {
            assert_eq!(a.train_loss.to_bits(), b.train_loss.to_bits());
            assert_eq!(a.val_loss.to_bits(), b.val_loss.to_bits());
        }
        assert_eq!(collect_bits(&ck_a.state), collect_bits(&ck_b.state));
    }

    #[test]
    fn best_checkpoint_never_worse_than_any_epoch() {
        let (state, split) = fixture(11);
        let cfg = TrainConfig {
            learning_rate: 2e-2,
            batch_size: 8,
            max_epochs: 8,
            patience: 3,
            seed: 11,
            grad_clip: None,
        };
        let (checkpoint, report) = train(state, &split, &cfg).unwrap();
        let best = checkpoint.val_loss.unwrap();
        for e in &report.epochs {
            assert!(
                best <= e.val_loss + 1e-12,
                "epoch {} beat the checkpoint",
                e.epoch
            );
        }
        assert_eq!(report.best_val_loss.unwrap(), best);
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise_forward_stable() {
        let (state, split) = fixture(13);
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 8,
            max_epochs: 2,
            patience: 10,
            seed: 13,
            grad_clip: None,
        };
        let (checkpoint, _) = train(state, &split, &cfg).unwrap();

        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &checkpoint).unwrap();
        let loaded: Checkpoint<f32> = load_checkpoint(dir.path()).unwrap();

        let window = &make_windows(&split.test, 16).unwrap().windows[0];
        let a = checkpoint.state.forward(window).unwrap();
        let b = loaded.state.forward(window).unwrap();
        let bits = |m: &Mat<f32>| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.phi_pred), bits(&b.phi_pred));
        assert_eq!(bits(&a.x_next_pred), bits(&b.x_next_pred));
        assert_eq!(loaded.epoch, checkpoint.epoch);
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let (state, split) = fixture(17);
        let cfg = TrainConfig {
            max_epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let (checkpoint, _) = train(state, &split, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &checkpoint).unwrap();
        let loaded = load_checkpoint::<f64>(dir.path());
        assert!(matches!(loaded, Err(Error::Checkpoint(_))));
    }

    #[test]
    fn gradient_clipping_bounds_the_global_norm() {
        let (state, split) = fixture(23);
        let batch = make_windows(&split.train, 16).unwrap();
        let (_, mut grads) = state
            .batch_loss_grad(&batch.windows, Mode::Eval, 0)
            .unwrap();
        let norm_of = |g: &Gradients<f32>| {
            g.slots
                .iter()
                .map(|m| m.sum_squares())
                .sum::<f32>()
                .sqrt()
        };
        let before = norm_of(&grads);
        assert!(before > 0.05, "fixture gradient unexpectedly tiny: {before}");
        let limit = (before / 2.0) as f64;
        clip_gradients(&mut grads, limit);
        let after = norm_of(&grads);
        assert!((after as f64 - limit).abs() / limit < 1e-5, "clipped to {after}");

        // Below the limit nothing changes.
        let mut copy = grads.clone();
        clip_gradients(&mut copy, limit * 10.0);
        assert_eq!(norm_of(&copy), after);
    }

    #[test]
    fn perfect_persistence_scores_zero_val_errors() {
        // Constant series + alpha=0 + zero encoders + identity operator +
        // denormalization: the prediction is exactly the constant.
        let window = 8;
        let values = Mat::from_vec(64, 1, vec![4.25f64; 64]);
        let series = crate::data::RawSeries::new(values, None).unwrap();
        let batch = make_windows(&series, window).unwrap();

        let mut cfg = ModelConfig::new(1, 0.0, 0.0, 0.0);
        cfg.window = window;
        cfg.q = 2;
        cfg.hidden1 = 3;
        cfg.hidden2 = 2;
        cfg.norm_flags = NormFlags {
            var_norm: true,
            var_denorm: true,
            inv_norm: true,
            inv_denorm: false,
        };
        let selection = fit_dominant_spectrum(&batch, 0.0).unwrap();
        let mut state = ModelState::init(cfg, selection, 5).unwrap();
        state.visit_params_mut(&mut |name, m| {
            if !name.starts_with("k_") {
                *m = Mat::zeros(m.rows(), m.cols());
            }
        });
        state.k_var.matrix = Mat::identity(3);
        state.k_inv.matrix = Mat::identity(1);

        let scores = evaluate_val_errors(&state, &batch).unwrap();
        assert_eq!(scores.len(), batch.len() * (window - 1));
        assert!(scores.scores.iter().all(|&s| s.abs() < 1e-12));
    }

    #[test]
    fn val_error_length_and_fill_contracts() {
        let (state, split) = fixture(19);
        let batch = make_windows(&split.val, 16).unwrap();
        let without = evaluate_val_errors(&state, &batch).unwrap();
        assert_eq!(without.len(), batch.len() * 15);
        let with = crate::detect::score_test(&state, &batch).unwrap();
        assert_eq!(with.len(), batch.len() * 16);
        // The filled score at each origin replicates the first in-window one.
        for w in 0..batch.len() {
            let base = w * 16;
            assert_eq!(with.scores[base], with.scores[base + 1]);
            assert_eq!(with.time_index[base], batch.origins[w]);
        }
    }
}
