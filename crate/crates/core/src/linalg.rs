//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Every matrix norm here is the spectral norm (largest singular value).

use nalgebra::{DMatrix, DVector};

use crate::error::{numeric, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn spectral_norm(m: &Matrix) -> f64 {
    m.singular_values().max()
}

/// `sigma_max / sigma_min`; infinite for singular input.
pub fn condition_number(m: &Matrix) -> f64 {
    let sv = m.singular_values();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        sv.max() / min
    }
}

/// Largest eigenvalue modulus of a real square matrix.
pub fn spectral_radius(m: &Matrix) -> Result<f64> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| numeric!("Schur decomposition did not converge"))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .fold(0.0, f64::max))
}

/// All eigenvalue moduli of a real square matrix, sorted descending.
pub fn eigenvalue_moduli(m: &Matrix) -> Result<alloc::vec::Vec<f64>> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| numeric!("Schur decomposition did not converge"))?;
    let mut moduli: alloc::vec::Vec<f64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| libm::hypot(z.re, z.im))
        .collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    Ok(moduli)
}

/// `(lambda_min, lambda_max)` of a symmetric matrix.
pub fn symmetric_extremes(m: &Matrix) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    (eig.eigenvalues.min(), eig.eigenvalues.max())
}

/// `(M + M^T) / 2`.
pub fn symmetric_part(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    a.clone()
        .lu()
        .solve(b)
        .ok_or_else(|| numeric!("singular {}x{} system", a.nrows(), a.ncols()))
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| numeric!("singular {}x{} matrix", a.nrows(), a.ncols()))
}

/// Numerical rank from singular values relative to the largest one.
pub fn rank(m: &Matrix, rel_tol: f64) -> usize {
    let sv = m.singular_values();
    let cutoff = sv.max() * rel_tol;
    sv.iter().filter(|&&s| s > cutoff).count()
}

pub fn norm1(v: &Vector) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn max_abs(v: &Vector) -> f64 {
    v.iter().fold(0.0, |acc, x| f64::max(acc, x.abs()))
}

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = Matrix::from_diagonal(&Vector::from_vec(alloc::vec![3.0, -5.0, 1.0]));
        assert_abs_diff_eq!(spectral_norm(&m), 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(condition_number(&m), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn spectral_radius_of_rotation() {
        // eigenvalues 0.6 +- 0.8i, modulus 1
        let m = Matrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        assert_abs_diff_eq!(spectral_radius(&m).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_solve_is_error() {
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(solve(&a, &Vector::from_vec(alloc::vec![1.0, 1.0])).is_err());
    }

    #[test]
    fn rank_detects_dependent_columns() {
        let m = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert_eq!(rank(&m, 1e-10), 1);
    }
}
