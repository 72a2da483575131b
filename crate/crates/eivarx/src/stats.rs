//! Small sample-statistics helpers used across the crate and its tests.

/// Arithmetic mean. Zero for an empty slice.
pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance (denominator `n - 1`). Zero for n < 2.
pub fn variance(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

/// Biased sample autocovariance at `lag` (denominator `n`, mean removed).
pub fn sample_acvf(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let m = mean(x);
    let mut acc = 0.0;
    for k in lag..n {
        acc += (x[k] - m) * (x[k - lag] - m);
    }
    acc / n as f64
}
