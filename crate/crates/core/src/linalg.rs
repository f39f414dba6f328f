//! Small dense helpers shared by the filter, cost and regulator code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Floor applied to the smallest eigenvalue of a repaired covariance.
pub const EIGEN_FLOOR: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Symmetrizes `m` and lifts its spectrum so the smallest eigenvalue is at
/// least [`EIGEN_FLOOR`]. Matrices that already comply are only symmetrized.
pub fn psd_repair(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            what: "psd_repair (columns)",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if !all_finite(m) {
        return Err(Error::numerical("non-finite entry in covariance"));
    }
    let mut sym = symmetrize(m);
    let lambda_min = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    if lambda_min < EIGEN_FLOOR {
        // margin for the rounding error of the eigen solver
        let slack = 64.0 * f64::EPSILON * sym.amax().max(1.0);
        let shift = EIGEN_FLOOR - lambda_min + slack;
        for i in 0..sym.nrows() {
            sym[(i, i)] += shift;
        }
    }
    Ok(sym)
}

/// Square root factor `L` with `L Lᵀ = m` for a symmetric PSD matrix, built
/// from the eigendecomposition so that singular covariances are allowed.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !all_finite(m) {
        return Err(Error::numerical("non-finite entry in covariance factorization"));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = m.amax().max(1.0);
    if eig.eigenvalues.min() < -1e-9 * scale {
        return Err(Error::numerical(format!(
            "covariance is not positive semidefinite (min eigenvalue {:e})",
            eig.eigenvalues.min()
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

/// Solves `s x = b` for symmetric positive-definite `s` via Cholesky.
pub fn spd_solve(s: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("matrix is not positive definite"))?;
    Ok(chol.solve(b))
}

pub fn quad_form(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(m * x))
}

/// Largest eigenvalue modulus of a general square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalue_moduli(m).into_iter().fold(0.0, f64::max)
}

pub fn eigenvalue_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repair_identity_is_identity() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(psd_repair(&eye).unwrap(), eye);
    }

    #[test]
    fn repair_removes_antisymmetric_part() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1e-13, -1e-13, 1.0]);
        let r = psd_repair(&m).unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        assert!((r - eye).amax() < 1e-15);
    }

    #[test]
    fn repair_lifts_negative_eigenvalue() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1e-10]));
        let r = psd_repair(&m).unwrap();
        // shift oracle: every eigenvalue moves by 1e-12 - (-1e-10)
        let shift = EIGEN_FLOOR + 1e-10;
        assert!((r[(0, 0)] - (1.0 + shift)).abs() < 2e-14);
        assert!(r[(1, 1)] >= EIGEN_FLOOR && r[(1, 1)] - EIGEN_FLOOR < 2e-14);
        assert!(min_eigenvalue(&r) >= EIGEN_FLOOR);
    }

    #[test]
    fn repair_is_idempotent_on_compliant_input() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let once = psd_repair(&m).unwrap();
        assert_eq!(psd_repair(&once).unwrap(), once);
    }

    #[test]
    fn repair_rejects_nan() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, f64::NAN, 0.0, 1.0]);
        assert!(matches!(psd_repair(&m), Err(Error::Numerical { .. })));
    }

    #[test]
    fn sqrt_factor_reconstructs() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let l = psd_sqrt(&m).unwrap();
        assert!((&l * l.transpose() - m).amax() < 1e-14);
    }

    #[test]
    fn spectral_radius_upper_triangular() {
        let a = DMatrix::from_row_slice(3, 3, &[0.92, 0.2, -0.1, 0.0, 0.95, -0.3, 0.0, 0.0, 0.93]);
        assert!((spectral_radius(&a) - 0.95).abs() < 1e-12);
    }
}
