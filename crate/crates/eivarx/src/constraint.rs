//! Recovery of the structured constraint matrix `[A -B]` from the
//! eigenvectors of the scaled covariance, and averaging of its shifted rows
//! into difference-equation coefficients.
//!
//! Row `i` of `A` is the previous row shifted one column right, with a unit
//! leading coefficient. Those known ones and zeros pin down an invertible
//! `d x d` transform `R` of the eigenvector basis: each row of `R` solves an
//! exactly determined `d x d` linear system, `d^2` equations in total.

use nalgebra::{DMatrix, DVector};

use crate::eigen::{symmetric_inverse_sqrt, EigenResult};
use crate::error::{EivarxError, Result};
use crate::model::DifferenceEquation;

/// Condition-number guard for the per-row structural systems. Beyond this
/// the assumed structure is inconsistent with the subspace, which signals a
/// wrong constraint count.
const CONDITION_LIMIT: f64 = 1e10;

/// The recovered constraint matrix pair. `a_hat` carries exact ones on its
/// diagonal and exact zeros outside each row's `eta_hat + 1` coefficient
/// window; `b_hat` is unconstrained. The full constraint matrix is
/// `[a_hat, -b_hat]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintEstimate {
    a_hat: DMatrix<f64>,
    b_hat: DMatrix<f64>,
    rotation: DMatrix<f64>,
}

impl ConstraintEstimate {
    /// Wraps an explicit `d x 2(L+1)` constraint matrix `[A -B]`. Useful for
    /// evaluating known (true) constraints with the residual machinery.
    pub fn from_full(matrix: DMatrix<f64>) -> Result<Self> {
        let d = matrix.nrows();
        let cols = matrix.ncols();
        if !cols.is_multiple_of(2) || d == 0 || d > cols / 2 {
            return Err(EivarxError::InvalidArgument(format!(
                "constraint matrix of shape {d}x{cols} is not a valid [A -B] pair"
            )));
        }
        let block = cols / 2;
        Ok(Self {
            a_hat: matrix.columns(0, block).into_owned(),
            b_hat: -matrix.columns(block, block).into_owned(),
            rotation: DMatrix::identity(d, d),
        })
    }

    pub fn a_hat(&self) -> &DMatrix<f64> {
        &self.a_hat
    }

    pub fn b_hat(&self) -> &DMatrix<f64> {
        &self.b_hat
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }

    /// Number of constraints `d`.
    pub fn d(&self) -> usize {
        self.a_hat.nrows()
    }

    /// Stacking lag `L` implied by the column count.
    pub fn lag(&self) -> usize {
        self.a_hat.ncols() - 1
    }

    /// Implied process order `eta = L - d + 1`.
    pub fn eta_hat(&self) -> usize {
        self.lag() - self.d() + 1
    }

    /// The `d x 2(L+1)` matrix `[A -B]` applied to stacked samples.
    pub fn full_matrix(&self) -> DMatrix<f64> {
        let d = self.d();
        let cols = self.a_hat.ncols();
        let mut m = DMatrix::<f64>::zeros(d, 2 * cols);
        m.columns_mut(0, cols).copy_from(&self.a_hat);
        m.columns_mut(cols, cols).copy_from(&(-&self.b_hat));
        m
    }
}

/// Recovers `[A -B]` from the eigenvectors of the `d` smallest eigenvalues.
/// `sigma_e` is the error covariance the data were scaled with; the
/// eigenvector rows are mapped back to original variables through its
/// inverse square root before the structural solve.
pub fn recover_constraints(
    eig: &EigenResult,
    d: usize,
    sigma_e: &DMatrix<f64>,
) -> Result<ConstraintEstimate> {
    let dim = eig.dim();
    if !dim.is_multiple_of(2) {
        return Err(EivarxError::InvalidArgument(
            "eigendecomposition dimension must be even".into(),
        ));
    }
    let block = dim / 2; // L + 1
    let lag = block - 1;
    if d < 1 || d > block {
        return Err(EivarxError::InvalidArgument(format!(
            "constraint count d = {d} outside 1..={block}"
        )));
    }
    if sigma_e.nrows() != dim || sigma_e.ncols() != dim {
        return Err(EivarxError::InvalidArgument(format!(
            "error covariance is {}x{}, expected {dim}x{dim}",
            sigma_e.nrows(),
            sigma_e.ncols()
        )));
    }
    let eta_hat = lag - d + 1;

    // W = V2' Sigma_e^{-1/2}: candidate constraint rows in original variables
    let root = symmetric_inverse_sqrt(sigma_e)?;
    let w = eig.smallest_vectors(d).transpose() * root;

    let mut rotation = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        // constrained columns of row i: value 1 at column i, zeros at the
        // d - 1 columns outside the coefficient window [i, i + eta_hat]
        let mut cols: Vec<usize> = Vec::with_capacity(d);
        cols.push(i);
        cols.extend(0..i);
        cols.extend(i + eta_hat + 1..=lag);
        debug_assert_eq!(cols.len(), d);

        let mut system = DMatrix::<f64>::zeros(d, d);
        for (c, &col) in cols.iter().enumerate() {
            for r in 0..d {
                system[(c, r)] = w[(r, col)]; // transposed: solve M' x = t
            }
        }
        let sv = system.clone().svd_unordered(false, false).singular_values;
        let (smin, smax) = sv.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
        if smin <= 0.0 || smax / smin > CONDITION_LIMIT {
            return Err(EivarxError::WrongConstraintCount {
                d,
                row: i,
                condition: if smin > 0.0 { smax / smin } else { f64::INFINITY },
            });
        }
        let mut target = DVector::<f64>::zeros(d);
        target[0] = 1.0;
        let solved = system
            .lu()
            .solve(&target)
            .ok_or(EivarxError::WrongConstraintCount { d, row: i, condition: f64::INFINITY })?;
        rotation.row_mut(i).copy_from(&solved.transpose());
    }

    let rotated = &rotation * &w;
    let mut a_hat = rotated.columns(0, block).into_owned();
    let b_hat = -rotated.columns(block, block).into_owned();

    // the solve drives these to ~1e-16; pin them exactly
    for i in 0..d {
        a_hat[(i, i)] = 1.0;
        for c in 0..i {
            a_hat[(i, c)] = 0.0;
        }
        for c in i + eta_hat + 1..=lag {
            a_hat[(i, c)] = 0.0;
        }
    }

    Ok(ConstraintEstimate { a_hat, b_hat, rotation })
}

/// Reads the coefficients off the final constraint row alone.
///
/// The structural zeros of the last row all sit in leading columns, which
/// pins its rotation row uniquely for every admissible system. Earlier rows
/// lose uniqueness whenever the true output order is below `eta_hat` (their
/// trailing zero constraints go vacuous because no shifted relation reaches
/// those columns), so averaging can mix adjacent shifts there. The
/// estimation loop therefore rebuilds the noise model from this row.
pub fn coefficients_from_last_row(c: &ConstraintEstimate) -> DifferenceEquation {
    let i = c.d() - 1;
    let eta = c.eta_hat();
    let a = (1..=eta).map(|m| c.a_hat[(i, i + m)]).collect();
    let b = (0..=eta).map(|m| c.b_hat[(i, i + m)]).collect();
    DifferenceEquation::new_unchecked(a, b, 0)
}

/// Averages the shifted copies of the coefficients across constraint rows:
/// `a_m = mean_i A[i, i+m]`, `b_m = mean_i B[i, i+m]`. Returns a model with
/// `n_y = n_u = eta_hat` and delay 0; delay resolution happens at reporting.
pub fn average_coefficients(c: &ConstraintEstimate) -> DifferenceEquation {
    let d = c.d();
    let eta = c.eta_hat();
    let mut a = vec![0.0; eta];
    let mut b = vec![0.0; eta + 1];
    for i in 0..d {
        for (m, am) in a.iter_mut().enumerate() {
            *am += c.a_hat[(i, i + m + 1)];
        }
        for (m, bm) in b.iter_mut().enumerate() {
            *bm += c.b_hat[(i, i + m)];
        }
    }
    let scale = 1.0 / d as f64;
    a.iter_mut().for_each(|v| *v *= scale);
    b.iter_mut().for_each(|v| *v *= scale);
    DifferenceEquation::new_unchecked(a, b, 0)
}

/// Builds the exact `[A -B]` rows of a known model at lag `L` (one row per
/// shift). Shared by tests and the synthetic oracles.
pub fn true_constraint_matrix(model: &DifferenceEquation, lag: usize) -> Result<DMatrix<f64>> {
    let eta = model.eta();
    if lag < eta {
        return Err(EivarxError::InvalidArgument(format!(
            "lag {lag} below process order {eta}"
        )));
    }
    let d = lag - eta + 1;
    let block = lag + 1;
    let mut m = DMatrix::<f64>::zeros(d, 2 * block);
    for i in 0..d {
        m[(i, i)] = 1.0;
        for (j, &aj) in model.a().iter().enumerate() {
            m[(i, i + j + 1)] = aj;
        }
        for j in 0..=eta {
            m[(i, block + i + j)] = -model.b_at(j);
        }
    }
    Ok(m)
}
