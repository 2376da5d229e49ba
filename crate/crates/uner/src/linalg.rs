//! Compound-symmetry kernel and small dense helpers.
//!
//! Every within-area covariance in this crate has the form `d·I_n + c·J_n`
//! (equal variances, equal covariances). [`CompoundSymmetry`] applies the
//! closed-form inverse and determinant of that structure, so no dense n×n
//! matrix is ever built or factorized on the sampling path.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for numerical rank decisions.
pub(crate) const RANK_TOL: f64 = 1e-10;

/// The matrix `d·I_n + c·J_n` where `J_n` is all ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompoundSymmetry {
    n: usize,
    diag: f64,
    common: f64,
}

impl CompoundSymmetry {
    /// `diag` must be strictly positive and `common` nonnegative.
    pub fn new(n: usize, diag: f64, common: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("compound symmetry block size must be >= 1".into()));
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::Domain(format!(
                "compound symmetry diagonal must be positive and finite, got {diag}"
            )));
        }
        if !(common >= 0.0) || !common.is_finite() {
            return Err(Error::Domain(format!(
                "compound symmetry common term must be nonnegative and finite, got {common}"
            )));
        }
        Ok(Self { n, diag, common })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn diag(&self) -> f64 {
        self.diag
    }

    pub fn common(&self) -> f64 {
        self.common
    }

    /// log|d·I + c·J| = (n−1)·log d + log(d + n·c).
    pub fn logdet(&self) -> f64 {
        let n = self.n as f64;
        (n - 1.0) * self.diag.ln() + (self.diag + n * self.common).ln()
    }

    /// Sherman–Morrison weight c / (d + n·c) shared by solve and quadratic form.
    fn shrink(&self) -> f64 {
        self.common / (self.diag + self.n as f64 * self.common)
    }

    /// Solve `(d·I + c·J) x = rhs` for a vector right-hand side.
    pub fn solve_vec(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(Error::Domain(format!(
                "rhs length {} does not match block size {}",
                rhs.len(),
                self.n
            )));
        }
        let w = self.shrink();
        let sum: f64 = rhs.iter().sum();
        Ok(rhs.iter().map(|&r| (r - w * sum) / self.diag).collect())
    }

    /// Solve with a matrix right-hand side (column by column).
    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.n {
            return Err(Error::Domain(format!(
                "rhs has {} rows but block size is {}",
                rhs.nrows(),
                self.n
            )));
        }
        let w = self.shrink();
        let mut out = rhs.clone();
        for mut col in out.column_iter_mut() {
            let sum: f64 = col.iter().sum();
            for x in col.iter_mut() {
                *x = (*x - w * sum) / self.diag;
            }
        }
        Ok(out)
    }

    /// Solve and return the log-determinant in one call.
    pub fn solve_logdet(&self, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
        Ok((self.solve_vec(rhs)?, self.logdet()))
    }

    /// Quadratic form rᵀ (d·I + c·J)⁻¹ r without materializing the solve.
    pub fn inv_quadform(&self, r: &[f64]) -> Result<f64> {
        if r.len() != self.n {
            return Err(Error::Domain(format!(
                "vector length {} does not match block size {}",
                r.len(),
                self.n
            )));
        }
        let sum: f64 = r.iter().sum();
        let ss: f64 = r.iter().map(|&x| x * x).sum();
        Ok((ss - self.shrink() * sum * sum) / self.diag)
    }

    /// Gaussian log-density of `r` (a centered residual vector) under this
    /// covariance.
    pub fn normal_logpdf(&self, r: &[f64]) -> Result<f64> {
        let q = self.inv_quadform(r)?;
        Ok(-0.5 * (self.n as f64 * LN_2PI + self.logdet() + q))
    }

    /// Dense realization, for oracles and error paths only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| {
            if i == j {
                self.diag + self.common
            } else {
                self.common
            }
        })
    }
}

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Numerical column rank with cutoff `RANK_TOL · σ_max`.
pub fn column_rank(x: &DMatrix<f64>) -> usize {
    let svd = x.clone().svd(false, false);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Minimum-norm least squares via SVD; tolerant of rank-deficient designs.
pub fn lstsq(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    svd.solve(y, RANK_TOL)
        .map_err(|e| Error::Domain(format!("least squares solve failed: {e}")))
}

/// Neumaier compensated summation over a fixed iteration order.
pub(crate) fn neumaier_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// log(exp(a) + exp(b)) tolerating -inf inputs.
pub(crate) fn logsumexp2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Numerically stable logistic function.
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn identity_block_solves_trivially() {
        let cs = CompoundSymmetry::new(2, 1.0, 0.0).unwrap();
        let (sol, logdet) = cs.solve_logdet(&[3.0, 4.0]).unwrap();
        assert_eq!(sol, vec![3.0, 4.0]);
        assert_eq!(logdet, 0.0);
    }

    #[test]
    fn logdet_matches_closed_form() {
        // n=3, d=1, c=1: det = 4
        let cs = CompoundSymmetry::new(3, 1.0, 1.0).unwrap();
        assert_relative_eq!(cs.logdet(), 4.0_f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn rejects_nonpositive_diag() {
        assert!(CompoundSymmetry::new(3, 0.0, 1.0).is_err());
        assert!(CompoundSymmetry::new(3, -1.0, 1.0).is_err());
        assert!(CompoundSymmetry::new(3, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn matches_dense_oracle_on_random_cases() {
        let mut rng = crate::rng::seeded_rng(1234);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=20);
            let d = rng.gen_range(0.05..5.0);
            let c = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..4.0) };
            let cs = CompoundSymmetry::new(n, d, c).unwrap();
            let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();

            let dense = cs.to_dense();
            let lu = dense.clone().lu();
            let x_dense = lu
                .solve(&DVector::from_column_slice(&rhs))
                .expect("dense solve");
            let logdet_dense = lu.determinant().ln();

            let (x, logdet) = cs.solve_logdet(&rhs).unwrap();
            for (a, b) in x.iter().zip(x_dense.iter()) {
                assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-12);
            }
            assert_relative_eq!(logdet, logdet_dense, max_relative = 1e-10, epsilon = 1e-12);

            let q = cs.inv_quadform(&rhs).unwrap();
            let q_dense = DVector::from_column_slice(&rhs).dot(&x_dense);
            assert_relative_eq!(q, q_dense, max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn neumaier_handles_cancellation() {
        let s = neumaier_sum([1.0, 1e100, 1.0, -1e100]);
        assert_eq!(s, 2.0);
    }

    #[test]
    fn logsumexp_handles_neg_infinity() {
        assert_eq!(logsumexp2(f64::NEG_INFINITY, -1.5), -1.5);
        assert_eq!(logsumexp2(-1.5, f64::NEG_INFINITY), -1.5);
        assert_relative_eq!(logsumexp2(0.0, 0.0), 2.0_f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn logistic_is_stable_in_both_tails() {
        assert_eq!(logistic(1e4), 1.0);
        assert_eq!(logistic(-1e4), 0.0);
        assert_relative_eq!(logistic(0.0), 0.5, max_relative = 1e-15);
    }
}
