//! Structured error covariance of lagged measurements: Yule-Walker
//! propagation of the output-noise autocovariance and assembly of the
//! block-diagonal covariance (Toeplitz output block, scaled-identity input
//! block).

use nalgebra::{DMatrix, DVector};

use crate::error::{EivarxError, Result};
use crate::model::spectral_radius;

/// Autocovariance function of the colored output noise, `values[l]` for
/// lags `0..=max_lag`. Symmetric by convention: a query at `-l` reads
/// `values[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Acvf {
    values: Vec<f64>,
}

impl Acvf {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_lag(&self) -> usize {
        self.values.len() - 1
    }

    pub fn at(&self, lag: isize) -> f64 {
        self.values[lag.unsigned_abs()]
    }
}

/// Solves the Yule-Walker equations for the ACVF of `A(q^-1) v = e` with
/// `e` white of variance `sigma2_ey`:
///
/// ```text
/// sum_{k=0}^{ny} a_k sigma_vv[l-k] = sigma2_ey * 1{l=0},  l = 0..ny
/// ```
///
/// (`a_0 = 1`, `sigma_vv[-l] = sigma_vv[l]`), then extends recursively
/// `sigma_vv[l] = -sum_k a_k sigma_vv[l-k]` for `l > ny`. The solution is
/// linear in `sigma2_ey`.
pub fn yule_walker_acvf(a: &[f64], sigma2_ey: f64, max_lag: usize) -> Result<Acvf> {
    if sigma2_ey < 0.0 || !sigma2_ey.is_finite() {
        return Err(EivarxError::InvalidArgument(format!(
            "sigma2_ey must be finite and non-negative, got {sigma2_ey}"
        )));
    }
    let ny = a.len();
    if max_lag < ny {
        return Err(EivarxError::InvalidArgument(format!(
            "max_lag {max_lag} must be at least the AR order {ny}"
        )));
    }
    if spectral_radius(a) >= 1.0 {
        return Err(EivarxError::InvalidModel(
            "Yule-Walker system requires a stable AR polynomial".into(),
        ));
    }

    // coefficients with a_0 = 1
    let coeff = |k: usize| -> f64 {
        if k == 0 {
            1.0
        } else {
            a[k - 1]
        }
    };

    // Rows l = 0..=ny over unknowns sigma_vv[0..=ny]; the term in
    // sigma_vv[l-k] folds onto |l-k| by symmetry.
    let dim = ny + 1;
    let mut system = DMatrix::<f64>::zeros(dim, dim);
    for l in 0..dim {
        for k in 0..dim {
            let idx = (l as isize - k as isize).unsigned_abs();
            system[(l, idx)] += coeff(k);
        }
    }
    let mut rhs = DVector::<f64>::zeros(dim);
    rhs[0] = sigma2_ey;

    let solved = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| EivarxError::SingularSystem("Yule-Walker equations".into()))?;

    let mut values: Vec<f64> = solved.iter().copied().collect();
    for l in dim..=max_lag {
        let mut acc = 0.0;
        for (i, &ai) in a.iter().enumerate() {
            acc -= ai * values[l - i - 1];
        }
        values.push(acc);
    }
    Ok(Acvf { values })
}

/// Yule-Walker ACVF at unit driving variance; multiply by `sigma2_ey` to
/// recover the full ACVF. Used to factor the covariance as
/// `Sigma_vy = sigma2_ey * Sigma~_vy` during variance estimation.
pub fn scaled_acvf_basis(a: &[f64], max_lag: usize) -> Result<Acvf> {
    yule_walker_acvf(a, 1.0, max_lag)
}

/// Block-diagonal error covariance of a lagged sample
/// `[y[k]..y[k-L], u[k]..u[k-L]]`:
/// a Toeplitz block from the output-noise ACVF and `sigma2_eu * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    matrix: DMatrix<f64>,
    lag: usize,
    sigma2_eu: f64,
}

impl CovarianceModel {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn sigma2_eu(&self) -> f64 {
        self.sigma2_eu
    }

    /// Dimension `2(L+1)`.
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Assembles the `2(L+1) x 2(L+1)` covariance `blockdiag(Toeplitz(acvf), sigma2_eu I)`.
pub fn build_covariance(acvf: &Acvf, sigma2_eu: f64, lag: usize) -> Result<CovarianceModel> {
    if acvf.max_lag() < lag {
        return Err(EivarxError::InvalidArgument(format!(
            "ACVF covers lags up to {} but the covariance needs lag {lag}",
            acvf.max_lag()
        )));
    }
    if sigma2_eu < 0.0 || !sigma2_eu.is_finite() {
        return Err(EivarxError::InvalidArgument(format!(
            "sigma2_eu must be finite and non-negative, got {sigma2_eu}"
        )));
    }
    let block = lag + 1;
    let mut matrix = DMatrix::<f64>::zeros(2 * block, 2 * block);
    for i in 0..block {
        for j in 0..block {
            matrix[(i, j)] = acvf.at(i as isize - j as isize);
        }
        matrix[(block + i, block + i)] = sigma2_eu;
    }
    Ok(CovarianceModel { matrix, lag, sigma2_eu })
}

/// Toeplitz output block alone, `(L+1) x (L+1)`.
pub fn toeplitz_block(acvf: &Acvf, lag: usize) -> Result<DMatrix<f64>> {
    if acvf.max_lag() < lag {
        return Err(EivarxError::InvalidArgument(format!(
            "ACVF covers lags up to {} but the block needs lag {lag}",
            acvf.max_lag()
        )));
    }
    let block = lag + 1;
    let mut m = DMatrix::<f64>::zeros(block, block);
    for i in 0..block {
        for j in 0..block {
            m[(i, j)] = acvf.at(i as isize - j as isize);
        }
    }
    Ok(m)
}
