//! Scoring, percentile threshold calibration, flagging, point adjustment,
//! and detection metrics.

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::scalar::Scalar;

/// Per-timestep anomaly scores aligned to absolute time indices.
#[derive(Clone, Debug)]
pub struct ScoreSeries<S> {
    pub scores: Vec<S>,
    pub time_index: Vec<usize>,
}

impl<S: Scalar> ScoreSeries<S> {
    pub fn new(scores: Vec<S>, time_index: Vec<usize>) -> Result<Self> {
        if scores.len() != time_index.len() {
            return Err(Error::Shape(format!(
                "score/index length mismatch: {} vs {}",
                scores.len(),
                time_index.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite() || *s < S::zero()) {
            return Err(Error::Numerical(
                "scores must be finite and non-negative".into(),
            ));
        }
        Ok(ScoreSeries { scores, time_index })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Calibrated decision threshold. `r` is the percentage of calibration
/// points intended to exceed `delta`.
#[derive(Clone, Copy, Debug)]
pub struct Threshold<S> {
    pub delta: S,
    pub r: f64,
    /// When set, `delta` was taken literally at the r-th percentile instead
    /// of the (100 - r)-th.
    pub literal: bool,
}

/// Linear-interpolation percentile via partial selection (the test oracle
/// uses a full sort instead).
fn percentile_select<S: Scalar>(values: &mut [S], p: f64) -> S {
    let n = values.len();
    debug_assert!(n > 0);
    if n == 1 {
        return values[0];
    }
    let rank = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, &mut lo_v, rest) = values.select_nth_unstable_by(lo, cmp);
    if frac == 0.0 || rest.is_empty() {
        return lo_v;
    }
    let hi_v = *rest
        .iter()
        .min_by(|a, b| cmp(*a, *b))
        .expect("rest is non-empty");
    lo_v + S::of(frac) * (hi_v - lo_v)
}

fn cmp<S: Scalar>(a: &S, b: &S) -> std::cmp::Ordering {
    a.partial_cmp(b).expect("scores are finite")
}

/// Pick `delta` so that roughly `r`% of the calibration scores exceed it:
/// the (100 - r)-th percentile with linear interpolation. The literal mode
/// reads the equation as written and takes the r-th percentile instead.
pub fn calibrate_threshold<S: Scalar>(
    val_scores: &ScoreSeries<S>,
    r: f64,
    literal: bool,
) -> Result<Threshold<S>> {
    if val_scores.is_empty() {
        return Err(Error::Calibration(
            "no validation scores to calibrate on".into(),
        ));
    }
    if !(0.0 < r && r < 100.0) {
        return Err(Error::Calibration(format!(
            "anomaly ratio r={r} outside (0, 100)"
        )));
    }
    let p = if literal { r } else { 100.0 - r };
    let mut work = val_scores.scores.clone();
    let delta = percentile_select(&mut work, p);
    Ok(Threshold { delta, r, literal })
}

/// Strict exceedance: ties at the threshold stay normal.
pub fn flag<S: Scalar>(scores: &ScoreSeries<S>, threshold: &Threshold<S>) -> Vec<u8> {
    scores
        .scores
        .iter()
        .map(|&s| u8::from(s > threshold.delta))
        .collect()
}

/// For each contiguous ground-truth anomaly segment, a single hit marks the
/// whole segment detected. Flags outside segments are untouched.
pub fn point_adjust(flags: &[u8], labels: &[u8]) -> Result<Vec<u8>> {
    if flags.len() != labels.len() {
        return Err(Error::Shape(format!(
            "flag/label length mismatch: {} vs {}",
            flags.len(),
            labels.len()
        )));
    }
    let mut adjusted = flags.to_vec();
    let n = labels.len();
    let mut t = 0;
    while t < n {
        if labels[t] == 1 {
            let start = t;
            let mut end = t;
            while end < n && labels[end] == 1 {
                end += 1;
            }
            if flags[start..end].contains(&1) {
                for a in adjusted[start..end].iter_mut() {
                    *a = 1;
                }
            }
            t = end;
        } else {
            t += 1;
        }
    }
    Ok(adjusted)
}

/// Pointwise confusion counts and the derived scores; zero denominators
/// yield zero by convention.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
}

pub fn compute_metrics(flags: &[u8], labels: &[u8]) -> Result<Metrics> {
    if flags.len() != labels.len() {
        return Err(Error::Shape(format!(
            "flag/label length mismatch: {} vs {}",
            flags.len(),
            labels.len()
        )));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_count = 0usize;
    for (&f, &l) in flags.iter().zip(labels) {
        match (f != 0, l != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_count += 1,
            (false, false) => {}
        }
    }
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_count > 0 {
        tp as f64 / (tp + fn_count) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Metrics {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_count,
    })
}

/// Full evaluation bundle for one threshold choice.
#[derive(Clone, Debug)]
pub struct DetectionResult {
    pub flags: Vec<u8>,
    pub adjusted_flags: Vec<u8>,
    pub raw: Metrics,
    pub adjusted: Metrics,
    pub delta: f64,
    pub r: f64,
}

pub fn evaluate<S: Scalar>(
    scores: &ScoreSeries<S>,
    threshold: &Threshold<S>,
    labels: &[u8],
) -> Result<DetectionResult> {
    let flags = flag(scores, threshold);
    if flags.len() != labels.len() {
        return Err(Error::Shape(format!(
            "scored {} points but have {} labels",
            flags.len(),
            labels.len()
        )));
    }
    let adjusted_flags = point_adjust(&flags, labels)?;
    let raw = compute_metrics(&flags, labels)?;
    let adjusted = compute_metrics(&adjusted_flags, labels)?;
    Ok(DetectionResult {
        flags,
        adjusted_flags,
        raw,
        adjusted,
        delta: threshold.delta.to_f64_lossy(),
        r: threshold.r,
    })
}

/// Per-step L2 prediction errors for a window batch. The score for target
/// index t+1 describes the prediction *of* t+1. With `boundary_fill` the
/// first index of each window (never a prediction target) replicates the
/// window's first computed score so every point is scored.
pub(crate) fn score_windows<S: Scalar>(
    state: &ModelState<S>,
    batch: &WindowBatch<S>,
    boundary_fill: bool,
) -> Result<ScoreSeries<S>> {
    let mut scores = Vec::new();
    let mut time_index = Vec::new();
    for (window, &origin) in batch.windows.iter().zip(&batch.origins) {
        let out = state.forward(window)?;
        let n = window.rows() - 1;
        let mut first: Option<S> = None;
        let mut window_scores = Vec::with_capacity(n);
        for j in 0..n {
            let actual = window.row(j + 1);
            let pred = out.x_next_pred.row(j);
            let mut acc = S::zero();
            for (&a, &p) in actual.iter().zip(pred) {
                let d = a - p;
                acc += d * d;
            }
            let e = acc.sqrt();
            if first.is_none() {
                first = Some(e);
            }
            window_scores.push(e);
        }
        if boundary_fill {
            scores.push(first.expect("window has at least one target"));
            time_index.push(origin);
        }
        for (j, e) in window_scores.into_iter().enumerate() {
            scores.push(e);
            time_index.push(origin + j + 1);
        }
    }
    ScoreSeries::new(scores, time_index)
}

/// Score a test batch with boundary fill: output length equals the windowed
/// test length.
pub fn score_test<S: Scalar>(
    state: &ModelState<S>,
    batch: &WindowBatch<S>,
) -> Result<ScoreSeries<S>> {
    score_windows(state, batch, true)
}

/// Labels aligned with a boundary-filled score series.
pub fn windowed_labels<S: Scalar>(batch: &WindowBatch<S>) -> Option<Vec<u8>> {
    batch
        .labels
        .as_ref()
        .map(|per_window| per_window.iter().flatten().copied().collect())
}
