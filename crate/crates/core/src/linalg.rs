//! Small dense-matrix helpers shared across the crate.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `[I, M, M^2, ..., M^max]` built incrementally; no eigendecomposition is
/// involved, so defective matrices are fine.
pub fn matrix_powers(m: &DMatrix<f64>, max: usize) -> Vec<DMatrix<f64>> {
    let n = m.nrows();
    let mut powers = Vec::with_capacity(max + 1);
    powers.push(DMatrix::identity(n, n));
    for k in 1..=max {
        let next = &powers[k - 1] * m;
        powers.push(next);
    }
    powers
}

/// Replace `m` by its symmetric part `(m + m^T)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Minimum eigenvalue of a symmetric matrix.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Largest absolute difference between entries of `a` and `b`.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// `‖m − m^T‖_max`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    max_abs_diff(m, &m.transpose())
}

/// Rank-revealing symmetric PSD factor `F` with `m = F F^T`.
///
/// Eigenvalues below `-tol` are rejected; small negative eigenvalues are
/// clamped to zero so that rank-deficient covariances (including the zero
/// matrix) factor cleanly.
pub fn psd_factor(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if asymmetry(m) > tol {
        return Err(Error::Validation(
            "matrix is not symmetric; cannot build a PSD factor".into(),
        ));
    }
    let eig = m.clone().symmetric_eigen();
    let mut scaled = eig.eigenvectors.clone();
    for (c, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -tol {
            return Err(Error::Validation(format!(
                "matrix is not positive semidefinite (eigenvalue {lambda:.3e})"
            )));
        }
        let s = lambda.max(0.0).sqrt();
        scaled.column_mut(c).scale_mut(s);
    }
    Ok(scaled)
}

/// Column-stacking vectorization.
pub fn vectorize(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`] for an `n × n` matrix.
pub fn unvectorize(v: &DVector<f64>, n: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Spectral radius via a dense eigensolve. Intended for small matrices and
/// test oracles; the stability module uses a matrix-free path by default.
pub fn spectral_radius_dense(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// Check that every row of `m` sums to one within `tol` and is nonnegative.
pub fn check_row_stochastic(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Validation(format!(
            "transition matrix must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    for i in 0..m.nrows() {
        let mut sum = 0.0;
        for j in 0..m.ncols() {
            let p = m[(i, j)];
            if p < 0.0 {
                return Err(Error::Validation(format!(
                    "transition probability ({}, {}) is negative: {p}",
                    i + 1,
                    j + 1
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::Validation(format!(
                "row {} of the transition matrix sums to {sum}, expected 1",
                i + 1
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn powers_match_repeated_multiplication() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = matrix_powers(&m, 3);
        assert_eq!(p[0], DMatrix::identity(2, 2));
        assert_eq!(p[1], m);
        assert_relative_eq!(p[3], &m * &m * &m, epsilon = 1e-12);
    }

    #[test]
    fn psd_factor_roundtrip_and_rank_deficient() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 1.0]); // rank 1
        let f = psd_factor(&m, 1e-10).unwrap();
        assert_relative_eq!(&f * f.transpose(), m, epsilon = 1e-10);
        assert!(psd_factor(&DMatrix::from_row_slice(1, 1, &[-1.0]), 1e-10).is_err());
        let z = psd_factor(&DMatrix::zeros(3, 3), 1e-10).unwrap();
        assert_eq!(&z * z.transpose(), DMatrix::zeros(3, 3));
    }

    #[test]
    fn vectorize_roundtrip() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unvectorize(&vectorize(&m), 2), m);
    }

    #[test]
    fn dense_radius_of_known_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, 0.0]);
        assert_relative_eq!(spectral_radius_dense(&m), 2.0_f64.sqrt(), epsilon = 1e-12);
    }
}
