//! Small dense symmetric-matrix helpers built on `nalgebra`'s symmetric
//! eigendecomposition.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{InarError, Result};

/// Smallest eigenvalue relative to the largest below which a symmetric
/// matrix is treated as not positive definite.
pub const PD_RATIO: f64 = 1e-10;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn eigen_range(eigenvalues: &nalgebra::DVector<f64>) -> (f64, f64) {
    let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Eigenvalue range `(min, max)` of the symmetric part of `m`.
pub fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    eigen_range(&SymmetricEigen::new(symmetrize(m)).eigenvalues)
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    let (min, max) = symmetric_eigen_range(m);
    max > 0.0 && min > PD_RATIO * max
}

/// Ratio of extreme eigenvalue magnitudes; infinite when singular.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    let max = eig.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let min = eig.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Principal inverse square root `R` of a symmetric positive definite `m`,
/// so that `R m R = I` and `R` is symmetric.
pub fn inverse_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(InarError::DimensionMismatch(format!(
            "inverse square root of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let (min, max) = eigen_range(&eig.eigenvalues);
    if !(max > 0.0 && min > PD_RATIO * max) {
        return Err(InarError::NotPositiveDefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    let scale = eig.eigenvalues.map(|v| 1.0 / v.sqrt());
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&scale) * v.transpose();
    Ok(symmetrize(&r))
}
