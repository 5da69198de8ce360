//! Dense row-major matrices over a generic [`Scalar`].
//!
//! Windows, observable sequences, and operator matrices are all small at
//! desk scale, so a plain `Vec`-backed layout with cache-friendly loops is
//! the right tool; no BLAS dependency.

use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Mat { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Mat {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, S::one());
        }
        m
    }

    pub fn diag(entries: &[S]) -> Self {
        let mut m = Mat::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> S {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[S] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(
            self.cols, other.rows,
            "matmul shape mismatch: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == S::zero() {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ik * b;
                }
            }
        }
        out
    }

    /// `self * other^T`; rows of `other` are dotted against rows of `self`.
    pub fn matmul_bt(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(
            self.cols, other.cols,
            "matmul_bt shape mismatch: {}x{} * ({}x{})^T",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = S::zero();
                for (&a, &b) in a_row.iter().zip(b_row.iter()) {
                    acc += a * b;
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// `self^T * other`.
    pub fn matmul_at(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(
            self.rows, other.rows,
            "matmul_at shape mismatch: ({}x{})^T * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a_ki) in a_row.iter().enumerate() {
                if a_ki == S::zero() {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ki * b;
                }
            }
        }
        out
    }

    pub fn add(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn add_assign(&mut self, other: &Mat<S>) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale(&self, c: S) -> Mat<S> {
        self.map(|x| x * c)
    }

    pub fn scale_assign(&mut self, c: S) {
        for x in self.data.iter_mut() {
            *x *= c;
        }
    }

    /// axpy: `self += c * other`.
    pub fn add_scaled_assign(&mut self, c: S, other: &Mat<S>) {
        assert_eq!(self.shape(), other.shape(), "add_scaled shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += c * b;
        }
    }

    pub fn frobenius_norm(&self) -> S {
        self.data.iter().map(|&x| x * x).sum::<S>().sqrt()
    }

    pub fn sum_squares(&self) -> S {
        self.data.iter().map(|&x| x * x).sum::<S>()
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |acc, &x| acc.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy of rows `start..start + len`.
    pub fn slice_rows(&self, start: usize, len: usize) -> Mat<S> {
        assert!(start + len <= self.rows, "slice_rows out of range");
        Mat {
            rows: len,
            cols: self.cols,
            data: self.data[start * self.cols..(start + len) * self.cols].to_vec(),
        }
    }

    /// Copy of columns `start..start + len`.
    pub fn slice_cols(&self, start: usize, len: usize) -> Mat<S> {
        assert!(start + len <= self.cols, "slice_cols out of range");
        let mut out = Mat::zeros(self.rows, len);
        for i in 0..self.rows {
            out.row_mut(i)
                .copy_from_slice(&self.row(i)[start..start + len]);
        }
        out
    }

    /// `[self | other]`.
    pub fn concat_cols(&self, other: &Mat<S>) -> Mat<S> {
        assert_eq!(self.rows, other.rows, "concat_cols row mismatch");
        let cols = self.cols + other.cols;
        let mut out = Mat::zeros(self.rows, cols);
        for i in 0..self.rows {
            out.row_mut(i)[..self.cols].copy_from_slice(self.row(i));
            out.row_mut(i)[self.cols..].copy_from_slice(other.row(i));
        }
        out
    }

    /// Per-column mean over rows.
    pub fn col_mean(&self) -> Vec<S> {
        let n = S::of(self.rows as f64);
        let mut mean = vec![S::zero(); self.cols];
        for i in 0..self.rows {
            for (m, &v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        mean
    }

    /// Per-column population standard deviation over rows.
    pub fn col_std(&self, mean: &[S]) -> Vec<S> {
        let n = S::of(self.rows as f64);
        let mut var = vec![S::zero(); self.cols];
        for i in 0..self.rows {
            for ((v, &x), &mu) in var.iter_mut().zip(self.row(i)).zip(mean.iter()) {
                let d = x - mu;
                *v += d * d;
            }
        }
        var.into_iter().map(|v| (v / n).sqrt()).collect()
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }
}

/// Moore--Penrose pseudo-inverse via one-sided Jacobi SVD.
///
/// Orthogonalizes column pairs of the (tall) input until the implicit Gram
/// matrix is diagonal; singular values below `max_sv * max_dim * eps` are
/// treated as zero. Accurate enough for the operator-recovery fixtures, which
/// are what this is for.
pub fn pseudo_inverse<S: Scalar>(a: &Mat<S>) -> Mat<S> {
    if a.rows() < a.cols() {
        return pseudo_inverse(&a.transpose()).transpose();
    }
    let m = a.rows();
    let n = a.cols();
    // u starts as a copy of `a`; rotations accumulate into v.
    let mut u = a.clone();
    let mut v = Mat::<S>::identity(n);

    let eps = S::epsilon();
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        let mut off = S::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = S::zero();
                let mut beta = S::zero();
                let mut gamma = S::zero();
                for i in 0..m {
                    let up = u.get(i, p);
                    let uq = u.get(i, q);
                    alpha += up * up;
                    beta += uq * uq;
                    gamma += up * uq;
                }
                off = off.max(gamma.abs() / (alpha * beta).sqrt().max(S::epsilon()));
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                // Jacobi rotation zeroing the (p, q) Gram entry.
                let zeta = (beta - alpha) / (S::of(2.0) * gamma);
                let t = zeta.signum() / (zeta.abs() + (S::one() + zeta * zeta).sqrt());
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = c * t;
                for i in 0..m {
                    let up = u.get(i, p);
                    let uq = u.get(i, q);
                    u.set(i, p, c * up - s * uq);
                    u.set(i, q, s * up + c * uq);
                }
                for i in 0..n {
                    let vp = v.get(i, p);
                    let vq = v.get(i, q);
                    v.set(i, p, c * vp - s * vq);
                    v.set(i, q, s * vp + c * vq);
                }
            }
        }
        if off < eps {
            break;
        }
    }

    // Column norms of u are the singular values.
    let mut sv = vec![S::zero(); n];
    for j in 0..n {
        let mut s2 = S::zero();
        for i in 0..m {
            let x = u.get(i, j);
            s2 += x * x;
        }
        sv[j] = s2.sqrt();
    }
    let max_sv = sv.iter().fold(S::zero(), |acc, &x| acc.max(x));
    let cutoff = max_sv * S::of(m.max(n) as f64) * eps;

    // pinv = V * diag(1/sv) * U_hat^T where U_hat holds the normalized
    // columns of u; negligible singular values are dropped.
    let mut pinv = Mat::zeros(n, m);
    for j in 0..n {
        if sv[j] <= cutoff || sv[j] == S::zero() {
            continue;
        }
        let w = S::one() / (sv[j] * sv[j]);
        for r in 0..n {
            let vr = v.get(r, j);
            if vr == S::zero() {
                continue;
            }
            for c in 0..m {
                let cur = pinv.get(r, c);
                pinv.set(r, c, cur + vr * u.get(c, j) * w);
            }
        }
    }
    pinv
}
