use rand::RngCore;

use crate::error::{invalid, numeric, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::rng::uniform;

const RANK_TOL: f64 = 1e-10;
const ROW_NORM_TOL: f64 = 1e-12;
const MAX_ATTEMPTS: usize = 10;

/// `n x d` feature map with full column rank and every row `||phi(s)|| <= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix(Matrix);

impl FeatureMatrix {
    pub fn new(phi: Matrix) -> Result<Self> {
        let (n, d) = phi.shape();
        if d == 0 || d > n {
            return Err(invalid!("need 1 <= d <= n, got n={n}, d={d}"));
        }
        if let Some(s) = (0..n).find(|&s| phi.row(s).norm_squared() > 1.0 + ROW_NORM_TOL) {
            return Err(invalid!("feature row {s} has norm above 1"));
        }
        if linalg::rank(&phi, RANK_TOL) != d {
            return Err(invalid!("feature matrix is rank deficient"));
        }
        Ok(Self(phi))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    /// Feature vector of state `s`.
    pub fn row(&self, s: usize) -> Vector {
        self.0.row(s).transpose()
    }

    /// Value estimate `phi(s)^T theta`.
    pub fn value(&self, s: usize, theta: &Vector) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.d() {
            acc += self.0[(s, k)] * theta[k];
        }
        acc
    }

    /// Row-major copy, handy for tight sampling loops.
    pub fn to_row_major(&self) -> alloc::vec::Vec<f64> {
        let (n, d) = self.0.shape();
        (0..n * d).map(|i| self.0[(i / d, i % d)]).collect()
    }
}

/// Random features: orthonormalized random columns, then every row scaled by
/// `1 / max_s ||phi(s)||` so the largest row norm is exactly one.
pub fn build_features<R: RngCore + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<FeatureMatrix> {
    if d == 0 || d > n {
        return Err(invalid!("need 1 <= d <= n, got n={n}, d={d}"));
    }
    for _ in 0..MAX_ATTEMPTS {
        let raw = Matrix::from_fn(n, d, |_, _| uniform(rng, -1.0, 1.0));
        if linalg::rank(&raw, RANK_TOL) < d {
            continue;
        }
        let q = raw.qr().q();
        let max_row = (0..n).map(|s| q.row(s).norm()).fold(0.0, f64::max);
        let phi = q / max_row;
        if let Ok(f) = FeatureMatrix::new(phi) {
            return Ok(f);
        }
    }
    Err(numeric!("could not draw a full-rank {n}x{d} feature matrix"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use approx::assert_abs_diff_eq;

    /// Rank by column-pivoted QR: count diagonal entries of R above tolerance.
    fn pivoted_rank(m: &Matrix) -> usize {
        let r = m.clone().col_piv_qr().r();
        let scale = r[(0, 0)].abs();
        (0..r.nrows().min(r.ncols()))
            .filter(|&i| r[(i, i)].abs() > 1e-10 * scale)
            .count()
    }

    #[test]
    fn square_features_are_invertible() {
        let phi = build_features(6, 6, &mut seeded(1)).unwrap();
        assert!(phi.matrix().clone().try_inverse().is_some());
    }

    #[test]
    fn max_row_norm_is_one() {
        let mut rng = seeded(2);
        for _ in 0..20 {
            let phi = build_features(30, 4, &mut rng).unwrap();
            let norms: alloc::vec::Vec<f64> = (0..30).map(|s| phi.row(s).norm()).collect();
            assert!(norms.iter().all(|&x| x <= 1.0 + 1e-12));
            assert_abs_diff_eq!(norms.iter().cloned().fold(0.0, f64::max), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn features_have_full_column_rank() {
        let mut rng = seeded(3);
        for _ in 0..50 {
            let phi = build_features(20, 5, &mut rng).unwrap();
            assert_eq!(pivoted_rank(phi.matrix()), 5);
        }
    }

    #[test]
    fn rejects_invalid_feature_matrices() {
        assert!(FeatureMatrix::new(Matrix::from_row_slice(2, 1, &[2.0, 0.0])).is_err());
        assert!(FeatureMatrix::new(Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5])).is_err());
        assert!(FeatureMatrix::new(Matrix::zeros(2, 3)).is_err());
        assert!(build_features(3, 4, &mut seeded(0)).is_err());
    }
}
