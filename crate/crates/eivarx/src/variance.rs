//! Maximum-likelihood estimation of the two driving-noise variances from
//! constraint residuals.
//!
//! With residual rows `r[k] = [A -B] z_L[k]` and the block error covariance
//! `Sigma_eL = s2_ey * T~ (+) s2_eu * I` (unit-variance ACVF Toeplitz `T~`),
//! the residual covariance splits linearly:
//!
//! ```text
//! Sigma_r(s2_ey, s2_eu) = s2_ey * (A T~ A') + s2_eu * (B B')
//! ```
//!
//! so the negative log-likelihood and its gradient are cheap in the two
//! Gram-like matrices and the residual Gram `R'R`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::acvf::{scaled_acvf_basis, toeplitz_block, Acvf};
use crate::constraint::ConstraintEstimate;
use crate::error::{EivarxError, Result};
use crate::lagged::LaggedMatrix;
use crate::model::project_stable_ar;
use crate::optim::nelder_mead;

/// Residual power (relative to data power) below which residuals are
/// treated as degenerate and variances cannot be estimated.
const DEGENERACY_RATIO: f64 = 1e-20;

/// Bound on the log-variance search box (e^46 ~ 1e20).
const LOG_BOUND: f64 = 46.0;

/// Applies the constraints to every stacked sample: row `t` of the result
/// is `[A -B] z_L[k]` for the `t`-th row of `Z`.
pub fn compute_residuals(c: &ConstraintEstimate, z: &LaggedMatrix) -> Result<DMatrix<f64>> {
    if z.cols() != 2 * (c.lag() + 1) {
        return Err(EivarxError::InvalidArgument(format!(
            "lagged matrix has {} columns, constraints expect {}",
            z.cols(),
            2 * (c.lag() + 1)
        )));
    }
    Ok(z.data() * c.full_matrix().transpose())
}

/// Prebuilt ingredients of the likelihood: residual Gram, and the two
/// variance-direction matrices.
#[derive(Debug, Clone)]
pub struct VarianceObjective {
    rows: usize,
    gram: DMatrix<f64>,
    g_y: DMatrix<f64>,
    g_u: DMatrix<f64>,
}

impl VarianceObjective {
    /// `acvf_basis` must be the unit-variance output-noise ACVF covering the
    /// constraint lag.
    pub fn new(
        c: &ConstraintEstimate,
        acvf_basis: &Acvf,
        residuals: &DMatrix<f64>,
    ) -> Result<Self> {
        let lag = c.lag();
        let toeplitz = toeplitz_block(acvf_basis, lag)?;
        let g_y = c.a_hat() * toeplitz * c.a_hat().transpose();
        let g_u = c.b_hat() * c.b_hat().transpose();
        let gram = residuals.transpose() * residuals;
        Ok(Self { rows: residuals.nrows(), gram, g_y, g_u })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Mean squared residual across all rows and constraint components.
    pub fn residual_mean_square(&self) -> f64 {
        self.gram.trace() / (self.rows as f64 * self.gram.nrows() as f64)
    }

    /// The model residual covariance at the given variance pair.
    pub fn sigma_r(&self, sigma2_ey: f64, sigma2_eu: f64) -> DMatrix<f64> {
        sigma2_ey * &self.g_y + sigma2_eu * &self.g_u
    }

    /// `M log|Sigma_r| + sum_k r'[k] Sigma_r^{-1} r[k]`, with `M` the actual
    /// residual row count.
    pub fn value(&self, sigma2_ey: f64, sigma2_eu: f64) -> Result<f64> {
        if sigma2_ey <= 0.0 || sigma2_eu <= 0.0 {
            return Err(EivarxError::InvalidArgument(
                "variances must be strictly positive".into(),
            ));
        }
        let sigma_r = self.sigma_r(sigma2_ey, sigma2_eu);
        let chol = sigma_r
            .cholesky()
            .ok_or(EivarxError::DegenerateResiduals)?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv = chol.inverse();
        let quad = inv.zip_fold(&self.gram, 0.0, |acc, a, b| acc + a * b);
        Ok(self.rows as f64 * log_det + quad)
    }

    /// Gradient of [`VarianceObjective::value`] with respect to
    /// `(ln sigma2_ey, ln sigma2_eu)`.
    pub fn gradient_log(&self, sigma2_ey: f64, sigma2_eu: f64) -> Result<[f64; 2]> {
        let sigma_r = self.sigma_r(sigma2_ey, sigma2_eu);
        let chol = sigma_r
            .cholesky()
            .ok_or(EivarxError::DegenerateResiduals)?;
        let inv = chol.inverse();
        let inv_gram_inv = &inv * &self.gram * &inv;
        let d = |g: &DMatrix<f64>| -> f64 {
            let trace_inv_g = inv.zip_fold(g, 0.0, |acc, a, b| acc + a * b);
            let trace_igig = inv_gram_inv.zip_fold(g, 0.0, |acc, a, b| acc + a * b);
            self.rows as f64 * trace_inv_g - trace_igig
        };
        Ok([sigma2_ey * d(&self.g_y), sigma2_eu * d(&self.g_u)])
    }
}

/// Spec-shaped convenience wrapper over [`VarianceObjective::value`].
pub fn negative_log_likelihood(
    sigma2_ey: f64,
    sigma2_eu: f64,
    c: &ConstraintEstimate,
    acvf_basis: &Acvf,
    residuals: &DMatrix<f64>,
) -> Result<f64> {
    VarianceObjective::new(c, acvf_basis, residuals)?.value(sigma2_ey, sigma2_eu)
}

/// Outcome of the variance search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub sigma2_ey: f64,
    pub sigma2_eu: f64,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimizes the residual likelihood over `(sigma2_ey, sigma2_eu)` by
/// Nelder-Mead on the log-variances. The ACVF shape is frozen at
/// `a_current` (projected to stability if needed); `init` warm-starts from
/// the previous outer iteration, otherwise a moment seed splits the residual
/// power equally between the two sources. Non-convergence is reported via
/// the flag, not an error.
pub fn estimate_variances(
    c: &ConstraintEstimate,
    z: &LaggedMatrix,
    a_current: &[f64],
    init: Option<(f64, f64)>,
    max_iter: usize,
) -> Result<VarianceEstimate> {
    let a_stable = project_stable_ar(a_current);
    let basis = scaled_acvf_basis(&a_stable, c.lag())?;
    let residuals = compute_residuals(c, z)?;
    let objective = VarianceObjective::new(c, &basis, &residuals)?;

    let res_ms = objective.residual_mean_square();
    let data_ms = z.data().iter().map(|v| v * v).sum::<f64>()
        / (z.rows() as f64 * z.cols() as f64);
    if res_ms <= DEGENERACY_RATIO * data_ms.max(f64::MIN_POSITIVE) {
        return Err(EivarxError::DegenerateResiduals);
    }

    let d = c.d() as f64;
    let (s2y0, s2u0) = init.unwrap_or_else(|| {
        // moment seed: each source explains half the residual power
        let gain_y = (objective.g_y.trace() / d).max(f64::MIN_POSITIVE);
        let gain_u = (objective.g_u.trace() / d).max(f64::MIN_POSITIVE);
        (0.5 * res_ms / gain_y, 0.5 * res_ms / gain_u)
    });
    let x0 = [s2y0.max(1e-18).ln(), s2u0.max(1e-18).ln()];

    let mut eval_error = None;
    let result = nelder_mead(
        |x| {
            if x.iter().any(|v| v.abs() > LOG_BOUND) {
                return f64::INFINITY;
            }
            match objective.value(x[0].exp(), x[1].exp()) {
                Ok(v) => v,
                Err(e) => {
                    eval_error.get_or_insert(e);
                    f64::INFINITY
                }
            }
        },
        &x0,
        0.5,
        max_iter,
        1e-8,
        1e-12,
    );
    if !result.value.is_finite() {
        return Err(eval_error.unwrap_or(EivarxError::DegenerateResiduals));
    }

    let sigma2_ey = result.x[0].exp();
    let sigma2_eu = result.x[1].exp();
    let converged = result.converged || {
        let g = objective.gradient_log(sigma2_ey, sigma2_eu)?;
        (g[0] * g[0] + g[1] * g[1]).sqrt() < 1e-8
    };
    Ok(VarianceEstimate {
        sigma2_ey,
        sigma2_eu,
        objective_value: result.value,
        iterations: result.iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::{true_constraint_matrix, ConstraintEstimate};
    use crate::lagged::stack;
    use crate::model::{DifferenceEquation, NoiseSpec};
    use crate::signal::{corrupt_measurements, generate_prbs, simulate_system, GaussianStream};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn example1() -> DifferenceEquation {
        DifferenceEquation::new(vec![-1.5, 0.7], vec![1.0, 0.5], 1).unwrap()
    }

    fn true_constraints(model: &DifferenceEquation, lag: usize) -> ConstraintEstimate {
        ConstraintEstimate::from_full(true_constraint_matrix(model, lag).unwrap()).unwrap()
    }

    fn example1_data(n: usize, seed: u64) -> crate::signal::TimeSeriesPair {
        let model = example1();
        let bits = (usize::BITS - n.leading_zeros()) .max(5);
        let u = generate_prbs(bits.min(20), n, 1, (-1.0, 1.0)).unwrap();
        let y = simulate_system(&model, &u).unwrap();
        let noise = NoiseSpec::new(0.2, 0.1).unwrap();
        corrupt_measurements(&y, &u, &model, &noise, seed).unwrap()
    }

    #[test]
    fn residuals_vanish_on_noise_free_data() {
        let model = example1();
        let u = generate_prbs(10, 1023, 1, (-1.0, 1.0)).unwrap();
        let y = simulate_system(&model, &u).unwrap();
        let pair = crate::signal::TimeSeriesPair::new(u, y, None, None, 0).unwrap();
        let z = stack(&pair, 5).unwrap();
        let c = true_constraints(&model, 5);
        let r = compute_residuals(&c, &z).unwrap();
        assert!(r.abs().max() < 1e-10, "max residual {}", r.abs().max());
    }

    #[test]
    fn residual_covariance_matches_prediction() {
        // with true constraints on noisy data the sample residual
        // covariance approaches [A -B] Sigma_eL [A -B]'
        let model = example1();
        let pair = example1_data(100_000, 23);
        let z = stack(&pair, 5).unwrap();
        let c = true_constraints(&model, 5);
        let r = compute_residuals(&c, &z).unwrap();
        let sample = r.transpose() * &r / r.nrows() as f64;

        let basis = scaled_acvf_basis(model.a(), 5).unwrap();
        let objective = VarianceObjective::new(&c, &basis, &r).unwrap();
        let predicted = objective.sigma_r(0.2, 0.1);
        let err = (&sample - &predicted).norm() / predicted.norm();
        assert!(err < 0.1, "relative Frobenius error {err}");
    }

    #[test]
    fn d1_residual_is_equation_error() {
        let model = example1();
        let pair = example1_data(2000, 5);
        let z = stack(&pair, 2).unwrap();
        let c = true_constraints(&model, 2);
        let r = compute_residuals(&c, &z).unwrap();
        assert_eq!(r.ncols(), 1);
        // compare one sample by hand: k = 10 (0-based row 8 at lag 2)
        let k = 10;
        let expect = pair.y[k] - 1.5 * pair.y[k - 1] + 0.7 * pair.y[k - 2]
            - pair.u[k - 1]
            - 0.5 * pair.u[k - 2];
        assert_abs_diff_eq!(r[(k - 2, 0)], expect, epsilon = 1e-10);
    }

    #[test]
    fn scalar_objective_matches_closed_form() {
        let model = example1();
        let pair = example1_data(3000, 7);
        let z = stack(&pair, 2).unwrap();
        let c = true_constraints(&model, 2);
        let r = compute_residuals(&c, &z).unwrap();
        let basis = scaled_acvf_basis(model.a(), 2).unwrap();
        let objective = VarianceObjective::new(&c, &basis, &r).unwrap();

        let (s2y, s2u) = (0.3, 0.05);
        let sigma_r = objective.sigma_r(s2y, s2u)[(0, 0)];
        let sum_sq: f64 = r.iter().map(|v| v * v).sum();
        let m = r.nrows() as f64;
        let expect = m * sigma_r.ln() + sum_sq / sigma_r;
        assert_relative_eq!(objective.value(s2y, s2u).unwrap(), expect, max_relative = 1e-12);
    }

    #[test]
    fn doubling_residuals_quadruples_quadratic_term() {
        let model = example1();
        let pair = example1_data(3000, 9);
        let z = stack(&pair, 5).unwrap();
        let c = true_constraints(&model, 5);
        let r = compute_residuals(&c, &z).unwrap();
        let basis = scaled_acvf_basis(model.a(), 5).unwrap();
        let obj1 = VarianceObjective::new(&c, &basis, &r).unwrap();
        let doubled = 2.0 * &r;
        let obj2 = VarianceObjective::new(&c, &basis, &doubled).unwrap();

        let (s2y, s2u) = (0.2, 0.1);
        let m = r.nrows() as f64;
        let chol = obj1.sigma_r(s2y, s2u).cholesky().unwrap();
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let quad1 = obj1.value(s2y, s2u).unwrap() - m * log_det;
        let quad2 = obj2.value(s2y, s2u).unwrap() - m * log_det;
        assert_relative_eq!(quad2, 4.0 * quad1, max_relative = 1e-10);
    }

    #[test]
    fn objective_invariant_under_row_permutation() {
        let model = example1();
        let pair = example1_data(500, 13);
        let z = stack(&pair, 5).unwrap();
        let c = true_constraints(&model, 5);
        let r = compute_residuals(&c, &z).unwrap();
        let mut rows: Vec<usize> = (0..r.nrows()).collect();
        rows.reverse();
        rows.swap(0, 7);
        let permuted = DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| r[(rows[i], j)]);
        let basis = scaled_acvf_basis(model.a(), 5).unwrap();
        let v1 = negative_log_likelihood(0.2, 0.1, &c, &basis, &r).unwrap();
        let v2 = negative_log_likelihood(0.2, 0.1, &c, &basis, &permuted).unwrap();
        assert_relative_eq!(v1, v2, max_relative = 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = example1();
        let pair = example1_data(2000, 29);
        let z = stack(&pair, 5).unwrap();
        let c = true_constraints(&model, 5);
        let r = compute_residuals(&c, &z).unwrap();
        let basis = scaled_acvf_basis(model.a(), 5).unwrap();
        let objective = VarianceObjective::new(&c, &basis, &r).unwrap();

        let mut g = GaussianStream::new(41, 0);
        for _ in 0..20 {
            let ly = -2.0 + 1.5 * g.next_standard().tanh();
            let lu = -2.5 + 1.5 * g.next_standard().tanh();
            let grad = objective.gradient_log(ly.exp(), lu.exp()).unwrap();
            let h = 1e-5;
            let fd = |dim: usize| {
                let mut lo = [ly, lu];
                let mut hi = [ly, lu];
                lo[dim] -= h;
                hi[dim] += h;
                (objective.value(hi[0].exp(), hi[1].exp()).unwrap()
                    - objective.value(lo[0].exp(), lo[1].exp()).unwrap())
                    / (2.0 * h)
            };
            for (dim, &analytic) in grad.iter().enumerate() {
                let numeric = fd(dim);
                assert_relative_eq!(analytic, numeric, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn estimates_white_noise_variances() {
        // white output noise, true constraints, both variances 1
        let model = DifferenceEquation::new(vec![], vec![1.0], 1).unwrap();
        let n = 10_000;
        let u = generate_prbs(14, n, 1, (-1.0, 1.0)).unwrap();
        let y = simulate_system(&model, &u).unwrap();
        let noise = NoiseSpec::new(1.0, 1.0).unwrap();
        let pair = corrupt_measurements(&y, &u, &model, &noise, 3).unwrap();
        let z = stack(&pair, 3).unwrap();
        let c = true_constraints(&model, 3);
        let est = estimate_variances(&c, &z, model.a(), None, 500).unwrap();
        assert!(est.converged);
        assert_relative_eq!(est.sigma2_ey, 1.0, max_relative = 0.05);
        assert_relative_eq!(est.sigma2_eu, 1.0, max_relative = 0.05);
    }

    #[test]
    fn estimates_example1_variances() {
        let model = example1();
        let pair = example1_data(1023, 15);
        let z = stack(&pair, 5).unwrap();
        let c = true_constraints(&model, 5);
        let est = estimate_variances(&c, &z, model.a(), None, 500).unwrap();
        assert!(est.converged);
        assert_abs_diff_eq!(est.sigma2_ey, 0.2, epsilon = 0.06);
        assert_abs_diff_eq!(est.sigma2_eu, 0.1, epsilon = 0.05);
    }

    #[test]
    fn estimates_converge_at_root_n_rate() {
        // with true constraints, the estimation error shrinks roughly as
        // 1/sqrt(N): log-log slope in [-0.7, -0.3]
        let model = example1();
        let c = true_constraints(&model, 5);
        let sizes = [2000usize, 8000, 32000];
        let mut mean_abs_err = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            let mut errs = Vec::new();
            for rep in 0..30u64 {
                let pair = example1_data(n, 1000 + 100 * i as u64 + rep);
                let z = stack(&pair, 5).unwrap();
                let est = estimate_variances(&c, &z, model.a(), None, 500).unwrap();
                errs.push((est.sigma2_ey - 0.2).abs());
            }
            mean_abs_err.push(errs.iter().sum::<f64>() / errs.len() as f64);
        }
        let slope = (mean_abs_err[2].ln() - mean_abs_err[0].ln())
            / ((sizes[2] as f64).ln() - (sizes[0] as f64).ln());
        assert!(
            (-0.7..=-0.3).contains(&slope),
            "convergence slope {slope:.3}, errors {mean_abs_err:?}"
        );
    }

    #[test]
    fn zero_residuals_error() {
        let model = example1();
        let u = generate_prbs(10, 1023, 1, (-1.0, 1.0)).unwrap();
        let y = simulate_system(&model, &u).unwrap();
        let pair = crate::signal::TimeSeriesPair::new(u, y, None, None, 0).unwrap();
        let z = stack(&pair, 5).unwrap();
        let c = true_constraints(&model, 5);
        let err = estimate_variances(&c, &z, model.a(), None, 500).unwrap_err();
        assert!(matches!(err, EivarxError::DegenerateResiduals));
    }

    #[test]
    fn warm_start_is_accepted() {
        let model = example1();
        let pair = example1_data(1023, 19);
        let z = stack(&pair, 5).unwrap();
        let c = true_constraints(&model, 5);
        let est = estimate_variances(&c, &z, model.a(), Some((0.2, 0.1)), 500).unwrap();
        assert_abs_diff_eq!(est.sigma2_ey, 0.2, epsilon = 0.06);
    }
}
