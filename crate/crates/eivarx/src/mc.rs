//! Seeded Monte Carlo harness: replicate generate -> corrupt -> estimate,
//! aggregate per-parameter means and 2-sigma spreads, and summarize the
//! converged eigenvalue spectra.

use serde::Serialize;

use crate::baselines::{dipca_diag, dpca, ols_arx};
use crate::error::{EivarxError, Result};
use crate::model::{DifferenceEquation, NoiseSpec};
use crate::pipeline::{identify, PipelineConfig};
use crate::signal::{corrupt_measurements, generate_prbs, simulate_system, TimeSeriesPair};
use crate::stats::{mean, variance};

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Proposed,
    Dpca,
    DipcaDiag,
    OlsArx,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Dpca => "dpca",
            Method::DipcaDiag => "dipca_diag",
            Method::OlsArx => "ols_arx",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Method::Proposed),
            "dpca" => Ok(Method::Dpca),
            "dipca_diag" => Ok(Method::DipcaDiag),
            "ols_arx" | "ols" => Ok(Method::OlsArx),
            other => Err(EivarxError::InvalidArgument(format!(
                "unknown method '{other}' (expected proposed, dpca, dipca_diag, ols_arx)"
            ))),
        }
    }
}

/// One simulated experiment: the true system, the noise level, and the
/// excitation. Each replicate draws a fresh PRBS register state and fresh
/// noise from its seed, so the replicate spread covers excitation
/// variability as well (the reference studies' spread of even deterministic
/// estimators requires this).
#[derive(Debug, Clone, Serialize)]
pub struct McScenario {
    pub model: DifferenceEquation,
    pub noise: NoiseSpec,
    pub n: usize,
    pub prbs_bits: u32,
    pub prbs_seed: u64,
    pub prbs_levels: (f64, f64),
}

impl McScenario {
    /// A scenario with `+-1` PRBS excitation sized to cover `n` samples.
    pub fn new(model: DifferenceEquation, noise: NoiseSpec, n: usize, prbs_bits: u32) -> Self {
        Self { model, noise, n, prbs_bits, prbs_seed: 1, prbs_levels: (-1.0, 1.0) }
    }

    /// Generates the replicate dataset for seed `seed`.
    pub fn realize(&self, seed: u64) -> Result<TimeSeriesPair> {
        let u = generate_prbs(
            self.prbs_bits,
            self.n,
            self.prbs_seed.wrapping_add(seed),
            self.prbs_levels,
        )?;
        let y = simulate_system(&self.model, &u)?;
        corrupt_measurements(&y, &u, &self.model, &self.noise, seed)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct McConfig {
    pub replications: usize,
    pub base_seed: u64,
    pub scenario: McScenario,
    pub methods: Vec<Method>,
    pub pipeline: PipelineConfig,
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(EivarxError::InvalidArgument(
                "replications must be at least 1".into(),
            ));
        }
        if !self.scenario.model.is_stable() {
            return Err(EivarxError::InvalidModel(
                "scenario model must be stable".into(),
            ));
        }
        if self.methods.is_empty() {
            return Err(EivarxError::InvalidArgument(
                "at least one method must be selected".into(),
            ));
        }
        Ok(())
    }
}

/// One method's fit on one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateFit {
    /// `(parameter name, estimate)` pairs.
    pub params: Vec<(String, f64)>,
    /// Estimated process order, when the method estimates one.
    pub eta_hat: Option<usize>,
    /// Converged eigenvalue spectrum at the accepted candidate (descending).
    pub eigenvalues: Option<Vec<f64>>,
}

/// All methods' results on one replicate, tagged with its index and seed.
#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub fits: Vec<(Method, std::result::Result<ReplicateFit, String>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamSummary {
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub two_sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenStat {
    /// 1-based position in the descending spectrum.
    pub index: usize,
    pub mean: f64,
    pub two_sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub params: Vec<ParamSummary>,
    /// Fraction of successful replicates recovering the true order
    /// (order-estimating methods only).
    pub order_recovery_rate: Option<f64>,
    /// Eigenvalue statistics over replicates that recovered the true order.
    pub eigenvalues: Option<Vec<EigenStat>>,
    /// Replicates aggregated into the moments.
    pub replicates_used: usize,
    /// `(replicate index, error)` pairs for failed replicates.
    pub failures: Vec<(usize, String)>,
    /// Successful replicates excluded because the estimated order differs
    /// from the truth (parameter layouts are not comparable).
    pub order_mismatches: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McSummary {
    pub replications: usize,
    pub base_seed: u64,
    pub methods: Vec<MethodSummary>,
}

impl McSummary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }
}

/// True parameter values keyed the same way the fits are.
fn truth_params(scenario: &McScenario) -> Vec<(String, f64)> {
    let model = &scenario.model;
    let eta = model.eta();
    let mut out = vec![
        ("sigma2_ey".to_string(), scenario.noise.sigma2_ey),
        ("sigma2_eu".to_string(), scenario.noise.sigma2_eu),
    ];
    for i in 1..=eta {
        let v = if i <= model.n_y() { model.a()[i - 1] } else { 0.0 };
        out.push((format!("a{i}"), v));
    }
    for j in 0..=eta {
        out.push((format!("b{j}"), model.b_at(j)));
    }
    out
}

fn fit_params_from_model(model: &DifferenceEquation, prefix_eta: usize) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for i in 1..=prefix_eta {
        let v = if i <= model.a().len() { model.a()[i - 1] } else { 0.0 };
        out.push((format!("a{i}"), v));
    }
    for j in 0..=prefix_eta {
        let v = model.b_at(j);
        out.push((format!("b{j}"), v));
    }
    out
}

/// Runs one method on one replicate dataset.
fn run_method(
    method: Method,
    series: &TimeSeriesPair,
    config: &McConfig,
) -> Result<ReplicateFit> {
    let truth = &config.scenario.model;
    let eta = truth.eta();
    match method {
        Method::Proposed => {
            let report = identify(series, &config.pipeline)?;
            let mut params = vec![
                ("sigma2_ey".to_string(), report.variances.sigma2_ey),
                ("sigma2_eu".to_string(), report.variances.sigma2_eu),
            ];
            params.extend(fit_params_from_model(&report.model, report.eta_hat));
            Ok(ReplicateFit {
                params,
                eta_hat: Some(report.eta_hat),
                eigenvalues: report.eigenvalue_trail.last().cloned(),
            })
        }
        Method::Dpca => {
            let r = dpca(series, eta)?;
            Ok(ReplicateFit {
                params: fit_params_from_model(&r.model, eta),
                eta_hat: None,
                eigenvalues: None,
            })
        }
        Method::DipcaDiag => {
            let r = dipca_diag(series, eta)?;
            let mut params = fit_params_from_model(&r.model, eta);
            if let Some(v) = r.sigma2_eu {
                params.push(("sigma2_eu".to_string(), v));
            }
            Ok(ReplicateFit { params, eta_hat: None, eigenvalues: None })
        }
        Method::OlsArx => {
            let r = ols_arx(series, truth.n_y(), truth.n_u(), truth.delay())?;
            let mut params = vec![(
                "sigma2_ey".to_string(),
                r.sigma2_ey.unwrap_or(f64::NAN),
            )];
            for (i, &ai) in r.model.a().iter().enumerate() {
                params.push((format!("a{}", i + 1), ai));
            }
            for (j, &bj) in r.model.b().iter().enumerate() {
                params.push((format!("b{}", truth.delay() + j), bj));
            }
            Ok(ReplicateFit { params, eta_hat: None, eigenvalues: None })
        }
    }
}

/// Runs one full replicate (all methods) with noise seed `base_seed + index`.
pub fn run_replicate(config: &McConfig, index: usize) -> Result<ReplicateResult> {
    let seed = config.base_seed + index as u64;
    let series = config.scenario.realize(seed)?;
    let fits = config
        .methods
        .iter()
        .map(|&m| (m, run_method(m, &series, config).map_err(|e| e.to_string())))
        .collect();
    Ok(ReplicateResult { index, seed, fits })
}

/// Aggregates replicate results into per-method summaries. Results are
/// sorted by replicate index first, so the aggregation is independent of
/// the order they were produced in.
pub fn aggregate(config: &McConfig, results: &[ReplicateResult]) -> Result<McSummary> {
    let mut sorted: Vec<&ReplicateResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.index);

    let truth = truth_params(&config.scenario);
    let true_eta = config.scenario.model.eta();
    let mut methods = Vec::with_capacity(config.methods.len());

    for &method in &config.methods {
        let mut failures = Vec::new();
        let mut order_mismatches = Vec::new();
        let mut usable: Vec<&ReplicateFit> = Vec::new();
        let mut recovered = 0usize;
        let mut succeeded = 0usize;

        for r in &sorted {
            let fit = r
                .fits
                .iter()
                .find(|(m, _)| *m == method)
                .map(|(_, f)| f)
                .expect("method present in every replicate");
            match fit {
                Ok(f) => {
                    succeeded += 1;
                    match f.eta_hat {
                        Some(eta) if eta != true_eta => order_mismatches.push(r.index),
                        _ => {
                            if f.eta_hat == Some(true_eta) {
                                recovered += 1;
                            }
                            usable.push(f);
                        }
                    }
                }
                Err(e) => failures.push((r.index, e.clone())),
            }
        }
        if usable.is_empty() {
            return Err(EivarxError::InvalidArgument(format!(
                "all replicates failed for method {}",
                method.name()
            )));
        }

        let mut params = Vec::new();
        for (name, _) in &usable[0].params {
            let values: Vec<f64> = usable
                .iter()
                .filter_map(|f| {
                    f.params
                        .iter()
                        .find(|(n, _)| n == name)
                        .map(|(_, v)| *v)
                })
                .collect();
            let truth_value = truth
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN);
            params.push(ParamSummary {
                parameter: name.clone(),
                truth: truth_value,
                mean: mean(&values),
                two_sigma: 2.0 * variance(&values).sqrt(),
            });
        }

        let order_recovery_rate = match method {
            Method::Proposed => Some(recovered as f64 / succeeded.max(1) as f64),
            _ => None,
        };

        let eigenvalues = if usable.iter().all(|f| f.eigenvalues.is_some()) {
            let dim = usable[0].eigenvalues.as_ref().map(|e| e.len()).unwrap_or(0);
            let stats = (0..dim)
                .map(|i| {
                    let values: Vec<f64> = usable
                        .iter()
                        .filter_map(|f| f.eigenvalues.as_ref().map(|e| e[i]))
                        .collect();
                    EigenStat {
                        index: i + 1,
                        mean: mean(&values),
                        two_sigma: 2.0 * variance(&values).sqrt(),
                    }
                })
                .collect();
            Some(stats)
        } else {
            None
        };

        methods.push(MethodSummary {
            method,
            params,
            order_recovery_rate,
            eigenvalues,
            replicates_used: usable.len(),
            failures,
            order_mismatches,
        });
    }

    Ok(McSummary {
        replications: config.replications,
        base_seed: config.base_seed,
        methods,
    })
}

/// Runs the full study: `replications` seeded replicates, aggregated.
pub fn run_mc(config: &McConfig) -> Result<McSummary> {
    config.validate()?;
    let results: Vec<ReplicateResult> = (0..config.replications)
        .map(|r| run_replicate(config, r))
        .collect::<Result<_>>()?;
    aggregate(config, &results)
}

/// Extracts the proposed method's eigenvalue statistics from an existing
/// summary.
pub fn eigenvalue_summary_of(summary: &McSummary) -> Option<&[EigenStat]> {
    summary
        .method(Method::Proposed)
        .and_then(|m| m.eigenvalues.as_deref())
}

/// Eigenvalue statistics of the proposed method over a study (runs the
/// study; extract via [`eigenvalue_summary_of`] when [`run_mc`]'s summary is
/// already at hand).
pub fn eigenvalue_summary(config: &McConfig) -> Result<Vec<EigenStat>> {
    if !config.methods.contains(&Method::Proposed) {
        return Err(EivarxError::InvalidArgument(
            "eigenvalue summary requires the proposed method".into(),
        ));
    }
    let summary = run_mc(config)?;
    summary
        .method(Method::Proposed)
        .and_then(|m| m.eigenvalues.clone())
        .ok_or_else(|| EivarxError::InvalidArgument("no eigenvalue data collected".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn example1_config(replications: usize, n: usize, bits: u32) -> McConfig {
        let model = DifferenceEquation::new(vec![-1.5, 0.7], vec![1.0, 0.5], 1).unwrap();
        let noise = NoiseSpec::new(0.2, 0.1).unwrap();
        McConfig {
            replications,
            base_seed: 1000,
            scenario: McScenario::new(model, noise, n, bits),
            methods: vec![Method::Proposed],
            pipeline: PipelineConfig::new(5),
        }
    }

    #[test]
    fn small_study_recovers_example1() {
        let config = example1_config(10, 1023, 10);
        let summary = run_mc(&config).unwrap();
        let proposed = summary.method(Method::Proposed).unwrap();
        assert!(proposed.order_recovery_rate.unwrap() >= 0.9);
        let a1 = proposed.params.iter().find(|p| p.parameter == "a1").unwrap();
        assert_abs_diff_eq!(a1.mean, -1.5, epsilon = 0.05);
        assert_eq!(a1.truth, -1.5);
        let b1 = proposed.params.iter().find(|p| p.parameter == "b1").unwrap();
        assert_abs_diff_eq!(b1.mean, 1.0, epsilon = 0.08);
    }

    #[test]
    fn aggregation_is_order_independent() {
        let config = example1_config(6, 511, 9);
        let mut results: Vec<ReplicateResult> = (0..6)
            .map(|r| run_replicate(&config, r).unwrap())
            .collect();
        let ordered = aggregate(&config, &results).unwrap();
        results.reverse();
        results.swap(1, 4);
        let shuffled = aggregate(&config, &results).unwrap();
        assert_eq!(
            serde_json::to_string(&ordered).unwrap(),
            serde_json::to_string(&shuffled).unwrap()
        );
    }

    #[test]
    fn identical_seeds_give_zero_spread() {
        let config = example1_config(1, 511, 9);
        let rep = run_replicate(&config, 0).unwrap();
        let twice = vec![
            ReplicateResult { index: 0, ..rep.clone() },
            ReplicateResult { index: 1, ..rep },
        ];
        let summary = aggregate(&config, &twice).unwrap();
        for p in &summary.method(Method::Proposed).unwrap().params {
            assert_eq!(p.two_sigma, 0.0, "parameter {}", p.parameter);
        }
    }

    #[test]
    fn seeds_are_arithmetic() {
        let config = example1_config(3, 511, 9);
        let r2 = run_replicate(&config, 2).unwrap();
        assert_eq!(r2.seed, 1002);
    }

    #[test]
    fn eigenvalue_summary_tracks_reference_pattern() {
        // converged spectra at the accepted candidate: two signal
        // eigenvalues well above unity, the trailing four near it
        let config = example1_config(20, 4095, 12);
        let eigen = eigenvalue_summary(&config).unwrap();
        assert_eq!(eigen.len(), 12);
        assert!(eigen[6].mean > 5.0, "lambda7 mean {}", eigen[6].mean);
        assert!(eigen[7].mean > 3.0, "lambda8 mean {}", eigen[7].mean);
        for e in &eigen[8..12] {
            assert!(
                (0.9..=1.1).contains(&e.mean),
                "lambda{} mean {}",
                e.index,
                e.mean
            );
        }
    }

    #[test]
    fn baseline_methods_share_the_replicate_data() {
        let mut config = example1_config(3, 511, 9);
        config.methods = vec![Method::Proposed, Method::Dpca, Method::OlsArx];
        let summary = run_mc(&config).unwrap();
        assert_eq!(summary.methods.len(), 3);
        let ols = summary.method(Method::OlsArx).unwrap();
        // OLS reports only the supplied support: a1, a2, b1, b2 (+ variance)
        let names: Vec<&str> = ols.params.iter().map(|p| p.parameter.as_str()).collect();
        assert_eq!(names, vec!["sigma2_ey", "a1", "a2", "b1", "b2"]);
    }
}
