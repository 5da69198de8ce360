//! Synthetic dynamical systems and anomaly injection for oracle-based tests.
//!
//! Every generator is a pure function of its spec and seed so fixtures are
//! reproducible byte-for-byte.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::RawSeries;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

/// Linear system `x_{k+1} = A x_k + noise`; the exact Koopman restriction on
/// identity observables is `A` itself.
#[derive(Clone, Debug)]
pub struct LinearSystemSpec<S> {
    pub a: Mat<S>,
    pub x0: Vec<S>,
    pub steps: usize,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnomalyKind {
    Spike,
    LevelShift,
    FreqShift,
}

#[derive(Clone, Debug)]
pub struct AnomalySpec {
    pub kind: AnomalyKind,
    pub positions: Vec<usize>,
    pub magnitude: f64,
    pub width: usize,
    /// Replacement frequency in cycles per `freq_period` samples, used by
    /// `FreqShift` only.
    pub shift_cycles: f64,
    pub freq_period: usize,
}

impl AnomalySpec {
    pub fn spikes(positions: Vec<usize>, magnitude: f64, width: usize) -> Self {
        AnomalySpec {
            kind: AnomalyKind::Spike,
            positions,
            magnitude,
            width,
            shift_cycles: 0.0,
            freq_period: 1,
        }
    }
}

/// Estimate the spectral radius of `a` by power iteration on a fixed start
/// vector; good enough to gate explosive systems.
fn spectral_radius_estimate<S: Scalar>(a: &Mat<S>) -> f64 {
    let n = a.rows();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.013 * i as f64).collect();
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let iters = 200;
    let tail = 50;
    let mut tail_acc = 0.0;
    for it in 0..iters {
        let mut next = vec![0.0; n];
        for (i, nx) in next.iter_mut().enumerate() {
            for (j, &vj) in v.iter().enumerate() {
                *nx += a.get(i, j).to_f64_lossy() * vj;
            }
        }
        let nn = norm(&next);
        if nn == 0.0 {
            return 0.0;
        }
        let growth = nn / norm(&v).max(f64::MIN_POSITIVE);
        if it >= iters - tail {
            tail_acc += growth.ln().max(-50.0);
        }
        for x in next.iter_mut() {
            *x /= nn;
        }
        v = next;
    }
    (tail_acc / tail as f64).exp()
}

/// Simulate the linear system. All labels are zero: these series are clean
/// by construction.
pub fn gen_linear_system<S: Scalar>(spec: &LinearSystemSpec<S>) -> Result<RawSeries<S>> {
    let m = spec.a.rows();
    if spec.a.cols() != m {
        return Err(Error::Shape(format!(
            "system matrix must be square, got {}x{}",
            spec.a.rows(),
            spec.a.cols()
        )));
    }
    if spec.x0.len() != m {
        return Err(Error::Shape(format!(
            "initial state length {} does not match system dimension {m}",
            spec.x0.len()
        )));
    }
    if spec.steps == 0 {
        return Err(Error::Spec("steps must be positive".into()));
    }
    let radius = spectral_radius_estimate(&spec.a);
    if radius > 1.05 {
        return Err(Error::UnstableSystem { radius });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut values = Mat::zeros(spec.steps, m);
    let mut state = spec.x0.clone();
    values.row_mut(0).copy_from_slice(&state);
    for k in 1..spec.steps {
        let mut next = vec![S::zero(); m];
        for (i, nx) in next.iter_mut().enumerate() {
            for (j, &sj) in state.iter().enumerate() {
                *nx += spec.a.get(i, j) * sj;
            }
            if spec.noise_std > 0.0 {
                let eps: f64 = rng.sample(StandardNormal);
                *nx += S::of(eps * spec.noise_std);
            }
        }
        values.row_mut(k).copy_from_slice(&next);
        state = next;
    }
    let labels = vec![0u8; spec.steps];
    RawSeries::new(values, Some(labels))
}

/// Sum of sinusoids with exactly known spectral content. Frequencies are in
/// cycles per `window_len` samples, so a tone at `f` lands in DFT bin `f` of
/// any length-`window_len` window.
pub fn gen_sine_mixture<S: Scalar>(
    freqs: &[(f64, f64, f64)],
    window_len: usize,
    n_windows: usize,
    channels: usize,
    noise_std: f64,
    seed: u64,
) -> Result<RawSeries<S>> {
    if window_len == 0 || n_windows == 0 || channels == 0 {
        return Err(Error::Spec(
            "window_len, n_windows, channels must be positive".into(),
        ));
    }
    let nyquist = window_len as f64 / 2.0;
    for &(f, _, _) in freqs {
        if f >= nyquist {
            return Err(Error::Spec(format!(
                "frequency {f} cycles/window reaches the Nyquist limit {nyquist}"
            )));
        }
        if f < 0.0 {
            return Err(Error::Spec("negative frequency".into()));
        }
    }
    let total = window_len * n_windows;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Mat::zeros(total, channels);
    for t in 0..total {
        let mut base = 0.0;
        for &(f, amp, phase) in freqs {
            let angle = 2.0 * std::f64::consts::PI * f * t as f64 / window_len as f64 + phase;
            base += amp * angle.sin();
        }
        for c in 0..channels {
            let noise: f64 = if noise_std > 0.0 {
                let eps: f64 = rng.sample(StandardNormal);
                eps * noise_std
            } else {
                0.0
            };
            values.set(t, c, S::of(base + noise));
        }
    }
    let labels = vec![0u8; total];
    RawSeries::new(values, Some(labels))
}

/// Perturb a series per the anomaly kind and mark the affected indices in
/// the labels. Spikes and level shifts apply to every channel.
pub fn inject_anomalies<S: Scalar>(
    series: &RawSeries<S>,
    spec: &AnomalySpec,
) -> Result<RawSeries<S>> {
    let total = series.len();
    if spec.width == 0 {
        return Err(Error::Spec("anomaly width must be positive".into()));
    }
    for &p in &spec.positions {
        let end = match spec.kind {
            AnomalyKind::LevelShift => total,
            _ => p + spec.width,
        };
        if p >= total || end > total {
            return Err(Error::Spec(format!(
                "anomaly at {p} (width {}) exceeds series length {total}",
                spec.width
            )));
        }
    }

    let mut values = series.values.clone();
    let mut labels = series.labels.clone().unwrap_or_else(|| vec![0u8; total]);
    let channels = series.dim();
    let mag = S::of(spec.magnitude);

    for &p in &spec.positions {
        match spec.kind {
            AnomalyKind::Spike => {
                for t in p..p + spec.width {
                    for c in 0..channels {
                        let v = values.get(t, c);
                        values.set(t, c, v + mag);
                    }
                    labels[t] = 1;
                }
            }
            AnomalyKind::LevelShift => {
                for t in p..total {
                    for c in 0..channels {
                        let v = values.get(t, c);
                        values.set(t, c, v + mag);
                    }
                    labels[t] = 1;
                }
            }
            AnomalyKind::FreqShift => {
                // Replace the segment outright: the disruption breaks the
                // periodic pattern instead of stacking on top of it.
                for t in p..p + spec.width {
                    let angle = 2.0 * std::f64::consts::PI * spec.shift_cycles * t as f64
                        / spec.freq_period.max(1) as f64;
                    let replacement = S::of(spec.magnitude * angle.sin());
                    for c in 0..channels {
                        values.set(t, c, replacement);
                    }
                    labels[t] = 1;
                }
            }
        }
    }

    let mut out = RawSeries::new(values, Some(labels))?;
    out.channel_names = series.channel_names.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::shift_pair;

    #[test]
    fn identity_map_holds_state() {
        let spec = LinearSystemSpec {
            a: Mat::identity(2),
            x0: vec![1.0, 2.0],
            steps: 50,
            noise_std: 0.0,
            seed: 7,
        };
        let s = gen_linear_system(&spec).unwrap();
        for k in 0..50 {
            assert_eq!(s.values.row(k), &[1.0, 2.0]);
        }
    }

    #[test]
    fn rotation_preserves_norm() {
        let c = std::f64::consts::FRAC_PI_4.cos();
        let s = std::f64::consts::FRAC_PI_4.sin();
        let spec = LinearSystemSpec {
            a: Mat::from_vec(2, 2, vec![c, -s, s, c]),
            x0: vec![1.0, 0.0],
            steps: 200,
            noise_std: 0.0,
            seed: 0,
        };
        let series = gen_linear_system(&spec).unwrap();
        for k in 0..200 {
            let r = series.values.row(k);
            let norm = (r[0] * r[0] + r[1] * r[1]).sqrt();
            assert!((norm - 1.0).abs() < 1e-10, "step {k}: norm {norm}");
        }
    }

    #[test]
    fn diagonal_decay_matches_closed_form() {
        // Independent oracle: x_k = (0.9^k x0_0, 0.5^k x0_1).
        let spec = LinearSystemSpec {
            a: Mat::from_vec(2, 2, vec![0.9, 0.0, 0.0, 0.5]),
            x0: vec![2.0, -3.0],
            steps: 40,
            noise_std: 0.0,
            seed: 0,
        };
        let series = gen_linear_system(&spec).unwrap();
        for k in 0..40 {
            let expect0 = 2.0 * 0.9f64.powi(k as i32);
            let expect1 = -3.0 * 0.5f64.powi(k as i32);
            assert!((series.values.get(k, 0) - expect0).abs() < 1e-12);
            assert!((series.values.get(k, 1) - expect1).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_free_steps_satisfy_recurrence() {
        let a = Mat::from_vec(2, 2, vec![0.7, 0.2, -0.1, 0.8]);
        let spec = LinearSystemSpec {
            a: a.clone(),
            x0: vec![1.0, 1.0],
            steps: 64,
            noise_std: 0.0,
            seed: 3,
        };
        let series = gen_linear_system(&spec).unwrap();
        for k in 0..63 {
            let x = series.values.row(k);
            let next = series.values.row(k + 1);
            for i in 0..2 {
                let expect: f64 = a.get(i, 0) * x[0] + a.get(i, 1) * x[1];
                assert!((next[i] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shifted_pair_of_linear_system_is_one_step_advance() {
        let a = Mat::from_vec(2, 2, vec![0.9, 0.05, -0.05, 0.9]);
        let spec = LinearSystemSpec {
            a: a.clone(),
            x0: vec![1.0, -1.0],
            steps: 10,
            noise_std: 0.0,
            seed: 0,
        };
        let series = gen_linear_system(&spec).unwrap();
        let (xt, xn) = shift_pair(&series.values).unwrap();
        // Row convention: x_next = x_t * A^T.
        let advanced = xt.matmul_bt(&a);
        assert!(xn.sub(&advanced).max_abs() < 1e-13);
    }

    #[test]
    fn explosive_system_rejected() {
        let spec = LinearSystemSpec {
            a: Mat::from_vec(2, 2, vec![1.5, 0.0, 0.0, 0.2]),
            x0: vec![1.0, 1.0],
            steps: 10,
            noise_std: 0.0,
            seed: 0,
        };
        assert!(matches!(
            gen_linear_system(&spec),
            Err(Error::UnstableSystem { .. })
        ));
    }

    #[test]
    fn empty_mixture_is_zero() {
        let s = gen_sine_mixture::<f64>(&[], 50, 2, 3, 0.0, 9).unwrap();
        assert_eq!(s.values.max_abs(), 0.0);
    }

    #[test]
    fn nyquist_frequency_rejected() {
        assert!(matches!(
            gen_sine_mixture::<f64>(&[(50.0, 1.0, 0.0)], 100, 1, 1, 0.0, 0),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn zero_magnitude_spike_marks_labels_only() {
        let base = gen_sine_mixture::<f64>(&[(5.0, 1.0, 0.0)], 100, 2, 1, 0.0, 1).unwrap();
        let spec = AnomalySpec::spikes(vec![30], 0.0, 2);
        let out = inject_anomalies(&base, &spec).unwrap();
        assert_eq!(out.values, base.values);
        assert_eq!(out.labels.as_ref().unwrap()[30], 1);
        assert_eq!(out.labels.as_ref().unwrap()[31], 1);
        assert_eq!(out.labels.as_ref().unwrap()[32], 0);
    }

    #[test]
    fn spike_on_zero_series_is_pure_construction() {
        let base = gen_sine_mixture::<f64>(&[], 100, 1, 1, 0.0, 0).unwrap();
        let spec = AnomalySpec::spikes(vec![50], 10.0, 1);
        let out = inject_anomalies(&base, &spec).unwrap();
        assert_eq!(out.values.get(50, 0), 10.0);
        assert_eq!(out.labels.as_ref().unwrap()[50], 1);
        let mass: usize = out
            .labels
            .as_ref()
            .unwrap()
            .iter()
            .map(|&x| x as usize)
            .sum();
        assert_eq!(mass, 1);
    }

    #[test]
    fn label_mass_counts_spike_widths() {
        let base = gen_sine_mixture::<f64>(&[(3.0, 1.0, 0.0)], 100, 3, 2, 0.0, 5).unwrap();
        let spec = AnomalySpec::spikes(vec![40, 170], 2.0, 4);
        let out = inject_anomalies(&base, &spec).unwrap();
        let mass: usize = out
            .labels
            .as_ref()
            .unwrap()
            .iter()
            .map(|&x| x as usize)
            .sum();
        assert_eq!(mass, 8);
    }

    #[test]
    fn spikes_change_values_only_at_labeled_indices() {
        let base = gen_sine_mixture::<f64>(&[(7.0, 0.8, 0.3)], 100, 2, 2, 0.01, 11).unwrap();
        let spec = AnomalySpec::spikes(vec![20, 120], 5.0, 3);
        let out = inject_anomalies(&base, &spec).unwrap();
        let labels = out.labels.as_ref().unwrap();
        for t in 0..base.len() {
            for c in 0..base.dim() {
                let changed = out.values.get(t, c) != base.values.get(t, c);
                assert_eq!(changed, labels[t] == 1, "index {t}");
            }
        }
    }

    #[test]
    fn level_shift_persists_to_the_end() {
        let base = gen_sine_mixture::<f64>(&[(2.0, 1.0, 0.0)], 20, 2, 1, 0.0, 3).unwrap();
        let spec = AnomalySpec {
            kind: AnomalyKind::LevelShift,
            positions: vec![25],
            magnitude: 4.0,
            width: 1,
            shift_cycles: 0.0,
            freq_period: 1,
        };
        let out = inject_anomalies(&base, &spec).unwrap();
        let labels = out.labels.as_ref().unwrap();
        for t in 0..base.len() {
            let expect = base.values.get(t, 0) + if t >= 25 { 4.0 } else { 0.0 };
            assert_eq!(out.values.get(t, 0), expect, "index {t}");
            assert_eq!(labels[t], u8::from(t >= 25));
        }
    }

    #[test]
    fn freq_shift_replaces_the_segment() {
        let base = gen_sine_mixture::<f64>(&[(5.0, 1.0, 0.0)], 100, 1, 2, 0.0, 4).unwrap();
        let spec = AnomalySpec {
            kind: AnomalyKind::FreqShift,
            positions: vec![40],
            magnitude: 0.7,
            width: 10,
            shift_cycles: 12.0,
            freq_period: 100,
        };
        let out = inject_anomalies(&base, &spec).unwrap();
        for t in 40..50 {
            let angle = 2.0 * std::f64::consts::PI * 12.0 * t as f64 / 100.0;
            let expect = 0.7 * angle.sin();
            for c in 0..2 {
                assert!((out.values.get(t, c) - expect).abs() < 1e-12);
            }
            assert_eq!(out.labels.as_ref().unwrap()[t], 1);
        }
        assert_eq!(out.values.get(39, 0), base.values.get(39, 0));
        assert_eq!(out.values.get(50, 0), base.values.get(50, 0));
    }

    #[test]
    fn out_of_range_position_rejected() {
        let base = gen_sine_mixture::<f64>(&[], 10, 1, 1, 0.0, 0).unwrap();
        let spec = AnomalySpec::spikes(vec![9], 1.0, 3);
        assert!(matches!(
            inject_anomalies(&base, &spec),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn generators_are_deterministic_per_seed() {
        let a = gen_sine_mixture::<f32>(&[(5.0, 1.0, 0.0)], 100, 3, 2, 0.1, 42).unwrap();
        let b = gen_sine_mixture::<f32>(&[(5.0, 1.0, 0.0)], 100, 3, 2, 0.1, 42).unwrap();
        assert_eq!(a.values, b.values);
        let c = gen_sine_mixture::<f32>(&[(5.0, 1.0, 0.0)], 100, 3, 2, 0.1, 43).unwrap();
        assert_ne!(a.values, c.values);
    }
}
