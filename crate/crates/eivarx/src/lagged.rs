//! Lagged data matrices, their sample covariances, and covariance-based
//! scaling transforms.

use nalgebra::DMatrix;

use crate::eigen::symmetric_inverse_sqrt;
use crate::error::{EivarxError, Result};
use crate::signal::TimeSeriesPair;

/// The stacked data matrix with rows
/// `[y[k], y[k-1], .., y[k-L], u[k], u[k-1], .., u[k-L]]`
/// for `k = L+1 ..= N` (1-based), i.e. `N - L` rows of `2(L+1)` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedMatrix {
    data: DMatrix<f64>,
    lag: usize,
}

impl LaggedMatrix {
    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }
}

/// Stacks a measurement record at lag `L`.
pub fn stack(series: &TimeSeriesPair, lag: usize) -> Result<LaggedMatrix> {
    stack_signals(&series.y, &series.u, lag)
}

/// Stacks the noise-free channels of a record, when present.
pub fn stack_noise_free(series: &TimeSeriesPair, lag: usize) -> Result<LaggedMatrix> {
    match (&series.y_star, &series.u_star) {
        (Some(y), Some(u)) => stack_signals(y, u, lag),
        _ => Err(EivarxError::InvalidArgument(
            "record has no noise-free channels".into(),
        )),
    }
}

/// Stacks raw output/input slices at lag `L`.
pub fn stack_signals(y: &[f64], u: &[f64], lag: usize) -> Result<LaggedMatrix> {
    if y.len() != u.len() {
        return Err(EivarxError::InvalidArgument(
            "output and input must have equal length".into(),
        ));
    }
    let n = y.len();
    let cols = 2 * (lag + 1);
    if n <= lag {
        return Err(EivarxError::InsufficientData { needed: lag + 1, got: n });
    }
    let rows = n - lag;
    let mut data = DMatrix::<f64>::zeros(rows, cols);
    for t in 0..rows {
        let k = lag + t;
        for j in 0..=lag {
            data[(t, j)] = y[k - j];
            data[(t, lag + 1 + j)] = u[k - j];
        }
    }
    Ok(LaggedMatrix { data, lag })
}

/// Concatenates the rows of several lagged matrices built at the same lag.
/// Used by the segment jackknife, where each contiguous piece of the record
/// is stacked separately.
pub fn concat_rows(parts: &[LaggedMatrix]) -> Result<LaggedMatrix> {
    let lag = parts
        .first()
        .ok_or_else(|| EivarxError::InvalidArgument("no matrices to concatenate".into()))?
        .lag;
    if parts.iter().any(|p| p.lag != lag) {
        return Err(EivarxError::InvalidArgument(
            "lagged matrices have mismatched lags".into(),
        ));
    }
    let rows: usize = parts.iter().map(|p| p.rows()).sum();
    let cols = parts[0].cols();
    let mut data = DMatrix::<f64>::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        data.rows_mut(at, p.rows()).copy_from(&p.data);
        at += p.rows();
    }
    Ok(LaggedMatrix { data, lag })
}

/// A symmetrized sample covariance together with the row count that
/// normalized it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCovariance {
    matrix: DMatrix<f64>,
    row_count: usize,
}

impl SampleCovariance {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `Z' Z / row_count`, symmetrized as `(M + M') / 2`. The normalization uses
/// the number of rows actually stacked (`N - L`), not the record length.
pub fn sample_covariance(z: &LaggedMatrix) -> SampleCovariance {
    let rows = z.rows();
    let m = z.data.transpose() * &z.data / rows as f64;
    let matrix = 0.5 * (&m + m.transpose());
    SampleCovariance { matrix, row_count: rows }
}

/// Two-sided scaling `S_e^{-1/2} S S_e^{-1/2}` by an SPD matrix `sigma_e`,
/// symmetrized. Columns are not mean-centered anywhere in this crate; the
/// excitation and noises are zero-mean by construction.
pub fn scale_covariance(s: &SampleCovariance, sigma_e: &DMatrix<f64>) -> Result<SampleCovariance> {
    if sigma_e.nrows() != s.dim() || sigma_e.ncols() != s.dim() {
        return Err(EivarxError::InvalidArgument(format!(
            "scaling matrix is {}x{}, covariance is {}x{}",
            sigma_e.nrows(),
            sigma_e.ncols(),
            s.dim(),
            s.dim()
        )));
    }
    let root = symmetric_inverse_sqrt(sigma_e)?;
    let scaled = &root * &s.matrix * &root;
    let matrix = 0.5 * (&scaled + scaled.transpose());
    Ok(SampleCovariance { matrix, row_count: s.row_count })
}
