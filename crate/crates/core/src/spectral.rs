//! Frequency decomposition: fit the dominant-bin set on training windows and
//! split any window into time-invariant and time-variant components.
//!
//! The transform is a direct real DFT with precomputed twiddle tables. At the
//! fixed window length (default 100) the O(L^2) evaluation is a rounding
//! error next to the encoders, and it keeps the math generic over the scalar
//! width.

use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::scalar::Scalar;

/// Real DFT over a fixed length with cached twiddle factors.
///
/// Bin `s` of input `x` is `sum_t x[t] * exp(-2*pi*i*s*t/L)` for
/// `s = 0..=L/2`.
#[derive(Clone, Debug)]
pub struct RealDft<S> {
    len: usize,
    bins: usize,
    cos: Vec<S>,
    sin: Vec<S>,
}

impl<S: Scalar> RealDft<S> {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "transform length must be positive");
        let bins = len / 2 + 1;
        let mut cos = Vec::with_capacity(bins * len);
        let mut sin = Vec::with_capacity(bins * len);
        for s in 0..bins {
            for t in 0..len {
                let angle = 2.0 * std::f64::consts::PI * (s * t) as f64 / len as f64;
                cos.push(S::of(angle.cos()));
                sin.push(S::of(angle.sin()));
            }
        }
        RealDft {
            len,
            bins,
            cos,
            sin,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    /// Forward transform: (real, imaginary) parts per bin.
    pub fn forward(&self, x: &[S]) -> (Vec<S>, Vec<S>) {
        assert_eq!(x.len(), self.len, "input length mismatch");
        let mut re = vec![S::zero(); self.bins];
        let mut im = vec![S::zero(); self.bins];
        for s in 0..self.bins {
            let cos_row = &self.cos[s * self.len..(s + 1) * self.len];
            let sin_row = &self.sin[s * self.len..(s + 1) * self.len];
            let mut a = S::zero();
            let mut b = S::zero();
            for ((&xv, &c), &sn) in x.iter().zip(cos_row).zip(sin_row) {
                a += xv * c;
                b -= xv * sn;
            }
            re[s] = a;
            im[s] = b;
        }
        (re, im)
    }

    /// Inverse transform keeping only the listed bins; all others are
    /// treated as zero. Bins 0 and L/2 (even L) carry weight 1, interior
    /// bins weight 2 from conjugate symmetry.
    pub fn inverse_filtered(&self, re: &[S], im: &[S], keep: &[usize]) -> Vec<S> {
        assert_eq!(re.len(), self.bins);
        assert_eq!(im.len(), self.bins);
        let inv_len = S::one() / S::of(self.len as f64);
        let two = S::of(2.0);
        let mut out = vec![S::zero(); self.len];
        for &s in keep {
            debug_assert!(s < self.bins);
            let weight = if s == 0 || (self.len.is_multiple_of(2) && s == self.len / 2) {
                S::one()
            } else {
                two
            };
            let a = re[s] * weight * inv_len;
            let b = im[s] * weight * inv_len;
            let cos_row = &self.cos[s * self.len..(s + 1) * self.len];
            let sin_row = &self.sin[s * self.len..(s + 1) * self.len];
            for ((o, &c), &sn) in out.iter_mut().zip(cos_row).zip(sin_row) {
                // Re((a + ib) * exp(+i angle)) = a cos - b sin.
                *o += a * c - b * sn;
            }
        }
        out
    }
}

/// The ranked spectrum: bin count, train-averaged amplitudes, and the
/// dominant subset selected by `alpha`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrequencySelection<S> {
    pub window_len: usize,
    pub spectrum_size: usize,
    pub mean_amplitude: Vec<S>,
    /// Dominant bins, sorted ascending.
    pub dominant: Vec<usize>,
    pub alpha: f64,
}

impl<S: Scalar> FrequencySelection<S> {
    /// Rebuild the dominant set from the stored amplitude table. Rank ties
    /// break toward the lower bin index; `|dominant| = round(alpha * |S|)`
    /// with round-half-up, clamped to the spectrum.
    pub fn select(mean_amplitude: &[S], alpha: f64, window_len: usize) -> Result<Vec<usize>> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Spectral(format!("alpha {alpha} outside [0, 1]")));
        }
        let size = mean_amplitude.len();
        let count = ((alpha * size as f64) + 0.5).floor() as usize;
        let count = count.min(size);
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&a, &b| {
            mean_amplitude[b]
                .partial_cmp(&mean_amplitude[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut dominant: Vec<usize> = order.into_iter().take(count).collect();
        dominant.sort_unstable();
        let _ = window_len;
        Ok(dominant)
    }
}

/// Average DFT amplitudes over every training window and channel, rank, and
/// freeze the top-`alpha` dominant set.
pub fn fit_dominant_spectrum<S: Scalar>(
    train_windows: &WindowBatch<S>,
    alpha: f64,
) -> Result<FrequencySelection<S>> {
    if train_windows.is_empty() {
        return Err(Error::Spectral(
            "cannot fit a spectrum on an empty batch".into(),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Spectral(format!("alpha {alpha} outside [0, 1]")));
    }
    let window_len = train_windows.window_len;
    let dft = RealDft::<S>::new(window_len);
    let bins = dft.bins();
    let mut acc = vec![S::zero(); bins];
    let mut count = 0usize;
    let mut column = vec![S::zero(); window_len];
    for window in &train_windows.windows {
        for c in 0..window.cols() {
            for t in 0..window_len {
                column[t] = window.get(t, c);
            }
            let (re, im) = dft.forward(&column);
            for s in 0..bins {
                acc[s] += (re[s] * re[s] + im[s] * im[s]).sqrt();
            }
            count += 1;
        }
    }
    let denom = S::of(count as f64);
    for a in acc.iter_mut() {
        *a /= denom;
    }
    let dominant = FrequencySelection::<S>::select(&acc, alpha, window_len)?;
    Ok(FrequencySelection {
        window_len,
        spectrum_size: bins,
        mean_amplitude: acc,
        dominant,
        alpha,
    })
}

/// Split a window into `(x_inv, x_var)`: the inverse transform of the
/// dominant bins and the exact remainder. `x_inv + x_var == window` by
/// construction.
pub fn split_invariant_variant<S: Scalar>(
    window: &Mat<S>,
    sel: &FrequencySelection<S>,
) -> Result<(Mat<S>, Mat<S>)> {
    if window.rows() != sel.window_len {
        return Err(Error::Spectral(format!(
            "window length {} does not match the fitted selection length {}",
            window.rows(),
            sel.window_len
        )));
    }
    let dft = RealDft::<S>::new(sel.window_len);
    let mut x_inv = Mat::zeros(window.rows(), window.cols());
    let mut column = vec![S::zero(); sel.window_len];
    for c in 0..window.cols() {
        for t in 0..sel.window_len {
            column[t] = window.get(t, c);
        }
        let (re, im) = dft.forward(&column);
        let inv = dft.inverse_filtered(&re, &im, &sel.dominant);
        for (t, v) in inv.into_iter().enumerate() {
            x_inv.set(t, c, v);
        }
    }
    let x_var = window.sub(&x_inv);
    Ok((x_inv, x_var))
}
