//! Equality test for the smallest eigenvalues of the scaled covariance.
//!
//! The likelihood-ratio statistic for equality of the `q` smallest
//! eigenvalues of a covariance matrix is
//!
//! ```text
//! T = n * (q ln(mean(lambda)) - sum ln(lambda_j))
//! ```
//!
//! compared against the chi-square quantile with `(q-1)(q+2)/2` degrees of
//! freedom. Quantiles come from a series/continued-fraction implementation
//! of the regularized incomplete gamma plus a Newton solve.

use serde::Serialize;

use crate::error::{EivarxError, Result};

/// One equality-test record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenEqualityTest {
    pub d_guess: usize,
    pub statistic: f64,
    pub dof: usize,
    pub critical_value: f64,
    pub alpha: f64,
    pub reject: bool,
}

/// Degrees of freedom for equality of the `q` smallest eigenvalues.
pub fn equality_dof(q: usize) -> usize {
    (q - 1) * (q + 2) / 2
}

/// Tests equality of the eigenvalues in `tail` (the `q` smallest, any
/// order). `row_count` is the number of stacked samples behind the
/// covariance estimate.
pub fn equality_test(tail: &[f64], row_count: usize, alpha: f64) -> Result<EigenEqualityTest> {
    let q = tail.len();
    if q < 2 {
        return Err(EivarxError::InvalidArgument(format!(
            "equality test needs at least 2 eigenvalues, got {q}"
        )));
    }
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(EivarxError::InvalidArgument(format!(
            "test level alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if tail.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(EivarxError::InvalidArgument(
            "equality test requires strictly positive eigenvalues".into(),
        ));
    }
    let mean = tail.iter().sum::<f64>() / q as f64;
    let log_sum: f64 = tail.iter().map(|l| l.ln()).sum();
    let statistic = (row_count as f64 * (q as f64 * mean.ln() - log_sum)).max(0.0);
    let dof = equality_dof(q);
    let critical_value = chi_square_quantile(1.0 - alpha, dof as f64)?;
    Ok(EigenEqualityTest {
        d_guess: q,
        statistic,
        dof,
        critical_value,
        alpha,
        reject: statistic > critical_value,
    })
}

/// Natural log of the gamma function (Lanczos, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.999_999_999_999_809_9;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x): series for x < a + 1,
/// continued fraction (modified Lentz) otherwise.
fn reg_gamma_lower(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series expansion
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..500 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        (log_prefix.exp() * sum).min(1.0)
    } else {
        // continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (log_prefix.exp() * h).min(1.0)
    }
}

/// Chi-square CDF with `dof` degrees of freedom.
pub fn chi_square_cdf(x: f64, dof: f64) -> f64 {
    reg_gamma_lower(0.5 * dof, 0.5 * x.max(0.0))
}

/// Chi-square quantile: solves `cdf(x) = p` by Newton iteration from a
/// Wilson-Hilferty start, with bisection safeguarding.
pub fn chi_square_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) || p <= 0.0 {
        return Err(EivarxError::InvalidArgument(format!(
            "quantile probability must lie in (0, 1), got {p}"
        )));
    }
    if dof <= 0.0 {
        return Err(EivarxError::InvalidArgument(format!(
            "degrees of freedom must be positive, got {dof}"
        )));
    }
    // Wilson-Hilferty start
    let z = standard_normal_quantile(p);
    let c = 2.0 / (9.0 * dof);
    let mut x = (dof * (1.0 - c + z * c.sqrt()).powi(3)).max(1e-8);

    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for _ in 0..200 {
        let f = chi_square_cdf(x, dof) - p;
        if f > 0.0 {
            hi = hi.min(x);
        } else {
            lo = lo.max(x);
        }
        // density of chi-square at x
        let a = 0.5 * dof;
        let log_pdf = (a - 1.0) * (0.5 * x).ln() - 0.5 * x - ln_gamma(a) - (2.0f64).ln();
        let pdf = log_pdf.exp();
        let step = if pdf > 0.0 { f / pdf } else { 0.0 };
        let mut next = x - step;
        if !(next > lo && (hi.is_infinite() || next < hi)) || step == 0.0 {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x };
        }
        if (next - x).abs() <= 1e-12 * x.max(1.0) {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Standard normal quantile (Acklam's rational approximation, refined by a
/// Newton step against erfc). Only used to seed the chi-square solve.
fn standard_normal_quantile(p: f64) -> f64 {
    // rational approximation, |relative error| < 1.15e-9
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
