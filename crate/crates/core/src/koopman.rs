//! Learnable Koopman operators: fixed-size square matrices advancing
//! observable sequences one step, plus the closed-form least-squares fit
//! used as a test oracle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mat::{pseudo_inverse, Mat};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Acts on measurement-inclusive observables, d = m + q.
    Variant,
    /// Acts on the dimension-matched invariant encoding, d = m.
    Invariant,
}

#[derive(Clone, Debug)]
pub struct KoopmanOperator<S> {
    pub matrix: Mat<S>,
    pub branch: Branch,
}

impl<S: Scalar> KoopmanOperator<S> {
    pub fn new(matrix: Mat<S>, branch: Branch) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(Error::Shape(format!(
                "operator must be square, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::Numerical("operator entries must be finite".into()));
        }
        Ok(KoopmanOperator { matrix, branch })
    }

    /// Identity plus small uniform noise: the no-dynamics prior.
    pub fn init(dim: usize, branch: Branch, rng: &mut ChaCha8Rng) -> Self {
        let mut matrix = Mat::identity(dim);
        for x in matrix.data_mut().iter_mut() {
            let eps: f64 = rng.random_range(-1e-3..1e-3);
            *x += S::of(eps);
        }
        KoopmanOperator { matrix, branch }
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }
}

/// Advance every row of `seq`: `out[i] = K · seq[i]` in the column-vector
/// convention, i.e. `seq · K^T` on row-stored sequences.
pub fn apply_operator<S: Scalar>(op: &KoopmanOperator<S>, seq: &Mat<S>) -> Result<Mat<S>> {
    if seq.cols() != op.dim() {
        return Err(Error::Shape(format!(
            "sequence width {} does not match operator dimension {}",
            seq.cols(),
            op.dim()
        )));
    }
    Ok(seq.matmul_bt(&op.matrix))
}

/// Regularization term: sum of the two Frobenius norms.
pub fn operator_norms<S: Scalar>(k_var: &KoopmanOperator<S>, k_inv: &KoopmanOperator<S>) -> S {
    k_var.matrix.frobenius_norm() + k_inv.matrix.frobenius_norm()
}

/// Gradient of `‖K‖_F` with respect to each entry: `k_ij / ‖K‖_F`, zero for
/// the zero matrix.
pub fn frobenius_grad<S: Scalar>(k: &Mat<S>) -> Mat<S> {
    let norm = k.frobenius_norm();
    if norm == S::zero() {
        Mat::zeros(k.rows(), k.cols())
    } else {
        k.scale(S::one() / norm)
    }
}

/// Closed-form DMD: the operator minimizing `‖x_next^T - K x_t^T‖_F` via the
/// Moore--Penrose pseudo-inverse. Snapshots are rows of the inputs.
pub fn dmd_least_squares<S: Scalar>(x_t: &Mat<S>, x_next: &Mat<S>) -> Result<KoopmanOperator<S>> {
    if x_t.shape() != x_next.shape() {
        return Err(Error::Shape(format!(
            "snapshot shapes differ: {:?} vs {:?}",
            x_t.shape(),
            x_next.shape()
        )));
    }
    // K = B A^+ with A = x_t^T, B = x_next^T (columns are snapshots).
    let a = x_t.transpose();
    let b = x_next.transpose();
    let k = b.matmul(&pseudo_inverse(&a));
    KoopmanOperator::new(k, Branch::Variant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::shift_pair;
    use crate::synth::{gen_linear_system, LinearSystemSpec};
    use rand::SeedableRng;

    fn op(entries: Vec<f64>, d: usize) -> KoopmanOperator<f64> {
        KoopmanOperator::new(Mat::from_vec(d, d, entries), Branch::Variant).unwrap()
    }

    #[test]
    fn identity_operator_is_identity() {
        let k = KoopmanOperator::new(Mat::identity(3), Branch::Variant).unwrap();
        let seq = Mat::from_vec(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 4.0]);
        assert_eq!(apply_operator(&k, &seq).unwrap(), seq);
    }

    #[test]
    fn zero_operator_annihilates() {
        let k = KoopmanOperator::new(Mat::zeros(2, 2), Branch::Invariant).unwrap();
        let seq = Mat::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(apply_operator(&k, &seq).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn diagonal_doubling() {
        let k = op(vec![2.0, 0.0, 0.0, 2.0], 2);
        let seq = Mat::from_vec(1, 2, vec![1.0, 3.0]);
        assert_eq!(apply_operator(&k, &seq).unwrap().data(), &[2.0, 6.0]);
    }

    #[test]
    fn width_mismatch_rejected() {
        let k = op(vec![1.0, 0.0, 0.0, 1.0], 2);
        let seq = Mat::zeros(2, 3);
        assert!(matches!(apply_operator(&k, &seq), Err(Error::Shape(_))));
    }

    #[test]
    fn application_is_linear() {
        let k = op(vec![0.3, -1.2, 0.7, 0.9], 2);
        let s1 = Mat::from_vec(3, 2, vec![0.1, 0.4, -0.2, 1.0, 0.6, -0.9]);
        let s2 = Mat::from_vec(3, 2, vec![1.3, -0.4, 0.25, 0.0, -1.6, 0.8]);
        let (a, b) = (1.7, -2.3);
        let lhs = apply_operator(&k, &s1.scale(a).add(&s2.scale(b))).unwrap();
        let rhs = apply_operator(&k, &s1)
            .unwrap()
            .scale(a)
            .add(&apply_operator(&k, &s2).unwrap().scale(b));
        assert!(lhs.sub(&rhs).max_abs() < 1e-10);
    }

    #[test]
    fn norms_of_zero_and_identity() {
        let zero = KoopmanOperator::new(Mat::<f64>::zeros(3, 3), Branch::Invariant).unwrap();
        let zero2 = KoopmanOperator::new(Mat::<f64>::zeros(3, 3), Branch::Variant).unwrap();
        assert_eq!(operator_norms(&zero2, &zero), 0.0);

        let ident = KoopmanOperator::new(Mat::<f64>::identity(3), Branch::Variant).unwrap();
        assert!((operator_norms(&ident, &zero) - 3.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn norm_345_triangle() {
        let k_var = op(vec![3.0, 4.0, 0.0, 0.0], 2);
        let k_inv = KoopmanOperator::new(Mat::zeros(2, 2), Branch::Invariant).unwrap();
        assert!((operator_norms(&k_var, &k_inv) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn frobenius_grad_matches_finite_differences() {
        let k = Mat::<f64>::from_vec(2, 2, vec![0.9, -0.3, 0.2, 1.4]);
        let grad = frobenius_grad(&k);
        let h = 1e-7;
        for idx in 0..4 {
            let mut plus = k.clone();
            plus.data_mut()[idx] += h;
            let mut minus = k.clone();
            minus.data_mut()[idx] -= h;
            let numeric = (plus.frobenius_norm() - minus.frobenius_norm()) / (2.0 * h);
            let analytic = grad.data()[idx];
            assert!(
                ((analytic - numeric) / numeric.abs().max(1e-6)).abs() < 1e-6,
                "entry {idx}: {analytic} vs {numeric}"
            );
        }
    }

    #[test]
    fn dmd_recovers_diagonal_generator() {
        let a = Mat::from_vec(2, 2, vec![0.9, 0.0, 0.0, 0.5]);
        let spec = LinearSystemSpec {
            a: a.clone(),
            x0: vec![1.0, 1.0],
            steps: 30,
            noise_std: 0.0,
            seed: 0,
        };
        let series = gen_linear_system(&spec).unwrap();
        let (xt, xn) = shift_pair(&series.values).unwrap();
        let k = dmd_least_squares(&xt, &xn).unwrap();
        assert!(k.matrix.sub(&a).max_abs() < 1e-8, "{:?}", k.matrix);
    }

    #[test]
    fn dmd_recovers_rotation_and_unit_eigenvalues() {
        let theta = std::f64::consts::FRAC_PI_4;
        let a = Mat::from_vec(
            2,
            2,
            vec![theta.cos(), -theta.sin(), theta.sin(), theta.cos()],
        );
        let spec = LinearSystemSpec {
            a: a.clone(),
            x0: vec![1.0, 0.0],
            steps: 64,
            noise_std: 0.0,
            seed: 0,
        };
        let series = gen_linear_system(&spec).unwrap();
        let (xt, xn) = shift_pair(&series.values).unwrap();
        let k = dmd_least_squares(&xt, &xn).unwrap();
        assert!(k.matrix.sub(&a).max_abs() < 1e-8);

        // 2x2 closed-form eigenvalues: complex pair with |λ| = sqrt(det).
        let m = &k.matrix;
        let tr = m.get(0, 0) + m.get(1, 1);
        let det = m.get(0, 0) * m.get(1, 1) - m.get(0, 1) * m.get(1, 0);
        let disc = tr * tr - 4.0 * det;
        assert!(disc < 0.0, "rotation eigenvalues must be complex");
        let modulus = det.sqrt();
        assert!((modulus - 1.0).abs() < 1e-6);
        let angle = ((-disc).sqrt() / 2.0).atan2(tr / 2.0);
        assert!((angle - theta).abs() < 1e-6);
    }

    #[test]
    fn dmd_fixes_constant_series() {
        let xt = Mat::from_vec(4, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let k = dmd_least_squares(&xt, &xt).unwrap();
        let advanced = apply_operator(&k, &xt).unwrap();
        assert!(advanced.sub(&xt).max_abs() < 1e-8);
    }

    #[test]
    fn dmd_residual_is_locally_optimal() {
        let a = Mat::from_vec(2, 2, vec![0.8, 0.1, -0.2, 0.95]);
        let spec = LinearSystemSpec {
            a,
            x0: vec![1.0, -0.5],
            steps: 40,
            noise_std: 0.05,
            seed: 9,
        };
        let series = gen_linear_system(&spec).unwrap();
        let (xt, xn) = shift_pair(&series.values).unwrap();
        let k = dmd_least_squares(&xt, &xn).unwrap();
        let residual = |m: &Mat<f64>| {
            let pred = xt.matmul_bt(m);
            xn.sub(&pred).frobenius_norm()
        };
        let base = residual(&k.matrix);
        for idx in 0..4 {
            for delta in [1e-4, -1e-4] {
                let mut perturbed = k.matrix.clone();
                perturbed.data_mut()[idx] += delta;
                assert!(
                    residual(&perturbed) >= base - 1e-12,
                    "perturbation {idx}/{delta} improved the residual"
                );
            }
        }
    }

    #[test]
    fn init_is_near_identity_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k: KoopmanOperator<f32> = KoopmanOperator::init(4, Branch::Variant, &mut rng);
        let dev = k.matrix.sub(&Mat::identity(4)).max_abs();
        assert!(dev > 0.0 && dev <= 1e-3);

        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let k2: KoopmanOperator<f32> = KoopmanOperator::init(4, Branch::Variant, &mut rng2);
        assert_eq!(k.matrix, k2.matrix);
    }
}
