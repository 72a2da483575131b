//! Symmetric eigendecomposition with a fixed ordering and sign convention,
//! plus the symmetric inverse square root used for covariance scaling.

use nalgebra::{DMatrix, DVector};

use crate::error::{EivarxError, Result};

/// Full spectral decomposition of a symmetric matrix. Eigenvalues are sorted
/// descending; column `j` of `eigenvectors` pairs with `eigenvalues[j]`, and
/// each eigenvector's largest-magnitude entry is positive so repeated runs
/// produce comparable bases.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenResult {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenResult {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// The `d` eigenvectors belonging to the smallest `d` eigenvalues,
    /// as columns.
    pub fn smallest_vectors(&self, d: usize) -> DMatrix<f64> {
        let n = self.dim();
        self.eigenvectors.columns(n - d, d).into_owned()
    }

    /// The smallest `d` eigenvalues in ascending order.
    pub fn smallest_values(&self, d: usize) -> Vec<f64> {
        let n = self.dim();
        (0..d).map(|i| self.eigenvalues[n - 1 - i]).collect()
    }
}

/// Eigendecomposition of a symmetric matrix (descending order, fixed
/// eigenvector signs).
pub fn eigendecompose(matrix: &DMatrix<f64>) -> EigenResult {
    let n = matrix.nrows();
    let se = matrix.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[j].total_cmp(&se.eigenvalues[i]));

    let mut eigenvalues = DVector::zeros(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = se.eigenvalues[src];
        let mut col = se.eigenvectors.column(src).into_owned();
        let mut max_idx = 0;
        for i in 1..n {
            if col[i].abs() > col[max_idx].abs() {
                max_idx = i;
            }
        }
        if col[max_idx] < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    EigenResult { eigenvalues, eigenvectors }
}

/// Symmetric inverse square root `Q L^{-1/2} Q'` of an SPD matrix. Fails if
/// any eigenvalue falls below `1e-12` times the largest one.
pub fn symmetric_inverse_sqrt(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = eigendecompose(matrix);
    let max = eig.eigenvalues[0];
    let floor = 1e-12 * max;
    if max <= 0.0 || eig.eigenvalues.iter().any(|&l| l <= floor) {
        return Err(EivarxError::NotPositiveDefinite(format!(
            "eigenvalues span [{:.3e}, {:.3e}]",
            eig.eigenvalues[eig.dim() - 1],
            max
        )));
    }
    let n = matrix.nrows();
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..n {
        let s = 1.0 / eig.eigenvalues[j].sqrt();
        scaled.column_mut(j).scale_mut(s);
    }
    let result = &scaled * eig.eigenvectors.transpose();
    // exact symmetry by construction of the half-sum
    Ok(0.5 * (&result + result.transpose()))
}
