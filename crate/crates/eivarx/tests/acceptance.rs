//! Acceptance suite: every release-gating check runs here, one test per
//! criterion, each printing a single PASS/FAIL line (run with
//! `cargo test -p eivarx --test acceptance -- --nocapture` to see them).
//!
//! The heavyweight Monte Carlo studies are shared across criteria through
//! lazily-initialized statics, so the suite stays around a minute.

use std::sync::OnceLock;

use eivarx::acvf::yule_walker_acvf;
use eivarx::constraint::{average_coefficients, recover_constraints, true_constraint_matrix};
use eivarx::eigen::eigendecompose;
use eivarx::lagged::{sample_covariance, stack};
use eivarx::mc::{run_mc, McConfig, McScenario, McSummary, Method};
use eivarx::model::{DifferenceEquation, NoiseSpec};
use eivarx::pipeline::{identify, inner_iteration, PipelineConfig};
use eivarx::signal::{corrupt_measurements, generate_prbs, simulate_system, GaussianStream, TimeSeriesPair};
use eivarx::variance::{compute_residuals, VarianceObjective};
use nalgebra::DMatrix;

const MC_SEED: u64 = 3000;

fn example1() -> DifferenceEquation {
    DifferenceEquation::new(vec![-1.5, 0.7], vec![1.0, 0.5], 1).unwrap()
}

fn example2() -> DifferenceEquation {
    DifferenceEquation::new(vec![-1.1, 0.7], vec![1.0, 0.5], 2).unwrap()
}

fn example1_series(n: usize, bits: u32, seed: u64) -> TimeSeriesPair {
    let model = example1();
    let u = generate_prbs(bits, n, 1, (-1.0, 1.0)).unwrap();
    let y = simulate_system(&model, &u).unwrap();
    corrupt_measurements(&y, &u, &model, &NoiseSpec::new(0.2, 0.1).unwrap(), seed).unwrap()
}

fn ex1_config(n: usize, bits: u32, methods: Vec<Method>) -> McConfig {
    McConfig {
        replications: 100,
        base_seed: MC_SEED,
        scenario: McScenario::new(example1(), NoiseSpec::new(0.2, 0.1).unwrap(), n, bits),
        methods,
        pipeline: PipelineConfig::new(5),
    }
}

fn ex2_config(sigma2_eu: f64, methods: Vec<Method>) -> McConfig {
    McConfig {
        replications: 100,
        base_seed: MC_SEED,
        scenario: McScenario::new(example2(), NoiseSpec::new(0.15, sigma2_eu).unwrap(), 4095, 12),
        methods,
        pipeline: PipelineConfig::new(6),
    }
}

fn ex1_summary(n: usize, bits: u32, cell: &OnceLock<McSummary>) -> &McSummary {
    cell.get_or_init(|| run_mc(&ex1_config(n, bits, vec![Method::Proposed])).unwrap())
}

fn ex1_n511() -> &'static McSummary {
    static CELL: OnceLock<McSummary> = OnceLock::new();
    ex1_summary(511, 9, &CELL)
}

fn ex1_n4095() -> &'static McSummary {
    static CELL: OnceLock<McSummary> = OnceLock::new();
    ex1_summary(4095, 12, &CELL)
}

fn ex1_n8191() -> &'static McSummary {
    static CELL: OnceLock<McSummary> = OnceLock::new();
    ex1_summary(8191, 13, &CELL)
}

fn param(summary: &McSummary, method: Method, name: &str) -> (f64, f64) {
    let m = summary.method(method).unwrap();
    let p = m
        .params
        .iter()
        .find(|p| p.parameter == name)
        .unwrap_or_else(|| panic!("parameter {name} missing"));
    (p.mean, p.two_sigma)
}

/// Collects sub-check failures and prints the one-line verdict.
struct Criterion {
    number: usize,
    label: &'static str,
    failures: Vec<String>,
}

impl Criterion {
    fn new(number: usize, label: &'static str) -> Self {
        Self { number, label, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: String) {
        if !ok {
            self.failures.push(detail);
        }
    }

    fn finish(self) {
        if self.failures.is_empty() {
            println!("acceptance criterion {}: PASS — {}", self.number, self.label);
        } else {
            println!(
                "acceptance criterion {}: FAIL — {} [{}]",
                self.number,
                self.label,
                self.failures.join("; ")
            );
        }
        assert!(
            self.failures.is_empty(),
            "criterion {} failed: {}",
            self.number,
            self.failures.join("; ")
        );
    }
}

// KNOWN RED: the pinned row truncates the exact lag-5 value -0.2875 to
// -0.28 (the other entries match the exact solution under truncation too),
// so the ±0.005 gate cannot hold there; the exact values carry a 1e-12
// check in the unit suite. Kept as written rather than loosened.
#[test]
fn criterion_1_yule_walker_exactness() {
    let mut c = Criterion::new(1, "Yule-Walker reproduces the reference ACVF row to ±0.005");
    let t0 = std::time::Instant::now();
    let acvf = yule_walker_acvf(&[-1.5, 0.7], 0.2, 5).unwrap();
    let elapsed = t0.elapsed();
    let reference = [1.77, 1.56, 1.10, 0.56, 0.07, -0.28];
    for (lag, &expect) in reference.iter().enumerate() {
        let got = acvf.values()[lag];
        c.check(
            (got - expect).abs() <= 0.005,
            format!("lag {lag}: {got:.4} vs {expect} (|diff| = {:.4})", (got - expect).abs()),
        );
    }
    c.check(
        elapsed.as_micros() < 1000,
        format!("runtime {elapsed:?} exceeds 1 ms"),
    );
    c.finish();
}

#[test]
fn criterion_2_order_recovery() {
    let mut c = Criterion::new(2, "order recovered in >= 95 of 100 replicates at N = 1023");
    let config = ex1_config(1023, 10, vec![Method::Proposed]);
    let summary = run_mc(&config).unwrap();
    let m = summary.method(Method::Proposed).unwrap();
    let rate = m.order_recovery_rate.unwrap();
    c.check(rate >= 0.95, format!("recovery rate {rate}"));

    // dof trail (14, 9) for d_guess (5, 4) on a reference run
    let series = example1_series(1023, 10, MC_SEED);
    let report = identify(&series, &PipelineConfig::new(5)).unwrap();
    let dofs: Vec<usize> = report.test_trail.iter().map(|t| t.dof).collect();
    c.check(dofs == vec![14, 9], format!("dof trail {dofs:?} != [14, 9]"));
    c.check(report.eta_hat == 2, format!("eta_hat {} != 2", report.eta_hat));
    c.finish();
}

// PARTLY RED, expected: every mean lands well inside ±0.02, but the pinned
// 2-sigma column is not self-consistent. Its sigma2_ey entry (0.012) sits
// below the iid Fisher-information bound for this two-parameter residual
// likelihood (2s >= 0.0136 before accounting for serial correlation of the
// overlapping residual rows), and the pinned a1/a2 spreads are about twice
// what the refined estimator attains (the pinned column also fails to
// shrink at the root-N rate implied by its own N=511 entries, which this
// implementation matches closely — see spread_shrinks_at_root_n_rate).
// Kept as written rather than loosened.
#[test]
fn criterion_3_parameter_accuracy_n4095() {
    let mut c = Criterion::new(3, "Example-1 N=4095 means within ±0.02, spreads within 50%");
    let summary = ex1_n4095();
    let mean_targets = [
        ("a1", -1.496),
        ("a2", 0.697),
        ("b0", 0.001),
        ("b1", 0.999),
        ("b2", 0.504),
        ("sigma2_ey", 0.21),
        ("sigma2_eu", 0.0913),
    ];
    for (name, target) in mean_targets {
        let (mean, _) = param(summary, Method::Proposed, name);
        c.check(
            (mean - target).abs() <= 0.02,
            format!("{name} mean {mean:.4} vs {target} (±0.02)"),
        );
    }
    let spread_targets = [
        ("a1", 0.024),
        ("a2", 0.022),
        ("b0", 0.017),
        ("b1", 0.03),
        ("b2", 0.04),
        ("sigma2_ey", 0.012),
        ("sigma2_eu", 0.014),
    ];
    for (name, target) in spread_targets {
        let (_, two_sigma) = param(summary, Method::Proposed, name);
        let rel = (two_sigma - target).abs() / target;
        c.check(
            rel <= 0.5,
            format!("{name} 2s {two_sigma:.4} vs {target} (rel {rel:.2})"),
        );
    }
    c.finish();
}

#[test]
fn criterion_4_consistency_trend() {
    let mut c = Criterion::new(4, "2-sigma of a1 shrinks monotonically over N = 511, 4095, 8191");
    let spreads: Vec<f64> = [ex1_n511(), ex1_n4095(), ex1_n8191()]
        .iter()
        .map(|s| param(s, Method::Proposed, "a1").1)
        .collect();
    c.check(
        spreads[0] > spreads[1] && spreads[1] > spreads[2],
        format!("2-sigma sequence {spreads:?} not strictly decreasing"),
    );
    c.finish();
}

#[test]
fn spread_shrinks_at_root_n_rate() {
    // companion invariant to criterion 4: the 16x record growth from 511 to
    // 8191 shrinks coefficient spreads by a factor near 4
    let lo = ex1_n511();
    let hi = ex1_n8191();
    for name in ["a1", "a2", "b0", "b1", "b2"] {
        let ratio = param(lo, Method::Proposed, name).1 / param(hi, Method::Proposed, name).1;
        assert!(
            (3.0..=5.0).contains(&ratio),
            "{name} spread ratio {ratio:.2} outside [3, 5]"
        );
    }
}

#[test]
fn criterion_5_baseline_bias() {
    let mut c = Criterion::new(5, "reference estimators reproduce their documented biases");
    let summary = run_mc(&ex1_config(4095, 12, vec![Method::Dpca, Method::DipcaDiag])).unwrap();
    let (dpca_b2, _) = param(&summary, Method::Dpca, "b2");
    c.check(
        (0.40..=0.47).contains(&dpca_b2),
        format!("unscaled-PCA b2 mean {dpca_b2:.4} outside [0.40, 0.47]"),
    );
    let (diag_b1, _) = param(&summary, Method::DipcaDiag, "b1");
    c.check(
        (1.07..=1.13).contains(&diag_b1),
        format!("diagonal-rescaling b1 mean {diag_b1:.4} outside [1.07, 1.13]"),
    );
    // both sit outside the proposed method's band, which contains the truth
    let (prop_b2, prop_b2_2s) = param(ex1_n4095(), Method::Proposed, "b2");
    c.check(
        (prop_b2 - 0.5).abs() <= prop_b2_2s,
        format!("proposed b2 band {prop_b2:.4}±{prop_b2_2s:.4} misses 0.5"),
    );
    c.check(
        (dpca_b2 - prop_b2).abs() > prop_b2_2s,
        format!("unscaled-PCA b2 {dpca_b2:.4} inside proposed band"),
    );
    let (prop_b1, prop_b1_2s) = param(ex1_n4095(), Method::Proposed, "b1");
    c.check(
        (diag_b1 - prop_b1).abs() > prop_b1_2s,
        format!("diagonal-rescaling b1 {diag_b1:.4} inside proposed band"),
    );
    c.finish();
}

#[test]
fn criterion_6_example2() {
    let mut c = Criterion::new(6, "third-order delayed system: order, accuracy, least-squares bias");
    // order recovery with the documented dof sequence on a reference run
    let model = example2();
    let u = generate_prbs(12, 4095, 1, (-1.0, 1.0)).unwrap();
    let y = simulate_system(&model, &u).unwrap();
    let series =
        corrupt_measurements(&y, &u, &model, &NoiseSpec::new(0.15, 0.1).unwrap(), MC_SEED).unwrap();
    let report = identify(&series, &PipelineConfig::new(6)).unwrap();
    c.check(report.eta_hat == 3, format!("eta_hat {} != 3", report.eta_hat));
    let dofs: Vec<usize> = report.test_trail.iter().map(|t| t.dof).collect();
    c.check(dofs == vec![20, 14, 9], format!("dof trail {dofs:?} != [20, 14, 9]"));

    // proposed-method means within ±0.04 of the reference table
    let summary = run_mc(&ex2_config(0.1, vec![Method::Proposed, Method::OlsArx])).unwrap();
    let targets = [
        ("sigma2_ey", 0.14),
        ("sigma2_eu", 0.106),
        ("a1", -1.072),
        ("a2", 0.67),
        ("a3", 0.0),
        ("b0", 0.0),
        ("b1", 0.01),
        ("b2", 0.99),
        ("b3", 0.52),
    ];
    for (name, target) in targets {
        let (mean, _) = param(&summary, Method::Proposed, name);
        c.check(
            (mean - target).abs() <= 0.04,
            format!("{name} mean {mean:.4} vs {target} (±0.04)"),
        );
    }

    // least squares: biased at low input SNR, near-unbiased at high
    let (ols_b2, _) = param(&summary, Method::OlsArx, "b2");
    c.check(ols_b2 <= 0.93, format!("least-squares b2 {ols_b2:.4} > 0.93 at s2_eu = 0.1"));
    let high_snr = run_mc(&ex2_config(0.01, vec![Method::OlsArx])).unwrap();
    let (ols_b2_hi, _) = param(&high_snr, Method::OlsArx, "b2");
    c.check(
        ols_b2_hi >= 0.98,
        format!("least-squares b2 {ols_b2_hi:.4} < 0.98 at s2_eu = 0.01"),
    );
    c.finish();
}

#[test]
fn criterion_7_eigenvalue_shift() {
    let mut c = Criterion::new(7, "unity eigenvalues at the correct candidate, and only there");
    let series = example1_series(1023, 10, MC_SEED + 1);
    let report = identify(&series, &PipelineConfig::new(5)).unwrap();
    c.check(
        (0.9..=1.1).contains(&report.lambda_min_refined),
        format!("refined smallest eigenvalue {:.4} outside [0.9, 1.1]", report.lambda_min_refined),
    );

    // converged spectra per candidate: trailing 4 near unity at d = 4,
    // trailing 5 not at d = 5
    let z = stack(&series, 5).unwrap();
    let s = sample_covariance(&z);
    let config = PipelineConfig::new(5);
    let at4 = inner_iteration(&z, &s, 4, &config).unwrap();
    let tail4 = at4.eigen.smallest_values(4);
    c.check(
        tail4.iter().all(|l| (0.9..=1.1).contains(l)),
        format!("d=4 trailing eigenvalues {tail4:?} not all in [0.9, 1.1]"),
    );
    let at5 = inner_iteration(&z, &s, 5, &config).unwrap();
    let tail5 = at5.eigen.smallest_values(5);
    c.check(
        !tail5.iter().all(|l| (0.9..=1.1).contains(l)),
        format!("d=5 trailing eigenvalues {tail5:?} unexpectedly all in [0.9, 1.1]"),
    );
    c.finish();
}

/// Random stable system with process order `eta <= 4`, delay `<= 2`, AR
/// coefficients from reflection coefficients (always stable).
fn random_system(g: &mut GaussianStream) -> DifferenceEquation {
    let eta = 1 + (g.next_standard().abs() * 2.0) as usize % 4;
    let delay = ((g.next_standard().abs() * 2.0) as usize).min(2).min(eta);
    // Levinson recursion from reflection coefficients in (-0.9, 0.9)
    let mut phi: Vec<f64> = Vec::new();
    for _ in 0..eta {
        let k = 0.9 * g.next_standard().tanh();
        let prev = phi.clone();
        phi.push(k);
        for j in 0..prev.len() {
            phi[j] = prev[j] - k * prev[prev.len() - 1 - j];
        }
    }
    // prediction coefficients phi map to a_i = -phi_i
    let a: Vec<f64> = phi.iter().map(|v| -v).collect();
    let mut b: Vec<f64> = (delay..=eta).map(|_| g.next_standard()).collect();
    if b[0].abs() < 0.3 {
        b[0] = 0.3f64.copysign(b[0] + f64::MIN_POSITIVE);
    }
    DifferenceEquation::new(a, b, delay).unwrap()
}

#[test]
fn criterion_8_property_suite() {
    let mut c = Criterion::new(8, "noise-free recovery, gradient, structure, determinism");

    // noise-free exact recovery across 50 random stable systems
    let mut g = GaussianStream::new(909, 0);
    let mut built = 0;
    while built < 50 {
        let model = random_system(&mut g);
        let eta = model.eta();
        let lag = eta + 1 + built % 2;
        let d = lag - eta + 1;
        let u = generate_prbs(11, 2047, 1 + built as u64, (-1.0, 1.0)).unwrap();
        let y = simulate_system(&model, &u).unwrap();
        let series = TimeSeriesPair::new(u, y, None, None, 0).unwrap();
        let z = stack(&series, lag).unwrap();
        let eig = eigendecompose(sample_covariance(&z).matrix());
        let dim = 2 * (lag + 1);
        let est = recover_constraints(&eig, d, &DMatrix::identity(dim, dim)).unwrap();
        let fit = average_coefficients(&est);
        let mut err = 0.0f64;
        for (i, &ai) in fit.a().iter().enumerate() {
            let truth = if i < model.a().len() { model.a()[i] } else { 0.0 };
            err = err.max((ai - truth).abs());
        }
        for (j, &bj) in fit.b().iter().enumerate() {
            err = err.max((bj - model.b_at(j)).abs());
        }
        c.check(
            err < 1e-6,
            format!("system {built} (eta {eta}, delay {}) recovery error {err:.2e}", model.delay()),
        );
        built += 1;
    }

    // likelihood gradient vs central finite differences at 20 points
    let model = example1();
    let series = example1_series(2047, 11, 5);
    let z = stack(&series, 5).unwrap();
    let truth = true_constraint_matrix(&model, 5).unwrap();
    let constraints = eivarx::constraint::ConstraintEstimate::from_full(truth).unwrap();
    let basis = eivarx::acvf::scaled_acvf_basis(model.a(), 5).unwrap();
    let residuals = compute_residuals(&constraints, &z).unwrap();
    let objective = VarianceObjective::new(&constraints, &basis, &residuals).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let ly = -2.0 + 1.5 * g.next_standard().tanh();
        let lu = -2.5 + 1.5 * g.next_standard().tanh();
        let grad = objective.gradient_log(ly.exp(), lu.exp()).unwrap();
        let h = 1e-5;
        for dim in 0..2 {
            let mut lo = [ly, lu];
            let mut hi = [ly, lu];
            lo[dim] -= h;
            hi[dim] += h;
            let numeric = (objective.value(hi[0].exp(), hi[1].exp()).unwrap()
                - objective.value(lo[0].exp(), lo[1].exp()).unwrap())
                / (2.0 * h);
            worst = worst.max((grad[dim] - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    c.check(worst <= 1e-4, format!("gradient mismatch {worst:.2e} > 1e-4"));

    // rotation structural constraints hold exactly on noisy data
    let noisy = example1_series(1023, 10, 11);
    let zn = stack(&noisy, 5).unwrap();
    let eig = eigendecompose(sample_covariance(&zn).matrix());
    let est = recover_constraints(&eig, 4, &DMatrix::identity(12, 12)).unwrap();
    let mut exact = true;
    for i in 0..4 {
        exact &= est.a_hat()[(i, i)] == 1.0;
        for col in 0..i {
            exact &= est.a_hat()[(i, col)] == 0.0;
        }
        for col in i + est.eta_hat() + 1..=5 {
            exact &= est.a_hat()[(i, col)] == 0.0;
        }
    }
    c.check(exact, "rotation structure not exact".into());

    // determinism of identify and run_mc
    let d1 = identify(&noisy, &PipelineConfig::new(5)).unwrap();
    let d2 = identify(&noisy, &PipelineConfig::new(5)).unwrap();
    c.check(
        serde_json::to_string(&d1).unwrap() == serde_json::to_string(&d2).unwrap(),
        "identify not deterministic".into(),
    );
    let mc_config = McConfig {
        replications: 5,
        base_seed: 77,
        scenario: McScenario::new(example1(), NoiseSpec::new(0.2, 0.1).unwrap(), 511, 9),
        methods: vec![Method::Proposed],
        pipeline: PipelineConfig::new(5),
    };
    let m1 = run_mc(&mc_config).unwrap();
    let m2 = run_mc(&mc_config).unwrap();
    c.check(
        serde_json::to_string(&m1).unwrap() == serde_json::to_string(&m2).unwrap(),
        "run_mc not deterministic".into(),
    );
    c.finish();
}
