//! Excitation and data generation: PRBS input, noise-free simulation of the
//! difference equation, and measurement corruption with ARX-structured
//! output noise plus white input noise.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{EivarxError, Result};
use crate::model::{DifferenceEquation, NoiseSpec};

/// Feedback tap positions (1-indexed polynomial exponents) of a primitive
/// polynomial per register length, giving maximal-length sequences of period
/// `2^m - 1`. Standard published table.
const LFSR_TAPS: [&[u32]; 30] = [
    &[2, 1],          // m = 2
    &[3, 2],          // 3
    &[4, 3],          // 4
    &[5, 3],          // 5
    &[6, 5],          // 6
    &[7, 6],          // 7
    &[8, 6, 5, 4],    // 8
    &[9, 5],          // 9
    &[10, 7],         // 10
    &[11, 9],         // 11
    &[12, 6, 4, 1],   // 12
    &[13, 4, 3, 1],   // 13
    &[14, 5, 3, 1],   // 14
    &[15, 14],        // 15
    &[16, 15, 13, 4], // 16
    &[17, 14],        // 17
    &[18, 11],        // 18
    &[19, 6, 2, 1],   // 19
    &[20, 17],        // 20
    &[21, 19],        // 21
    &[22, 21],        // 22
    &[23, 18],        // 23
    &[24, 23, 22, 17],// 24
    &[25, 22],        // 25
    &[26, 6, 2, 1],   // 26
    &[27, 5, 2, 1],   // 27
    &[28, 25],        // 28
    &[29, 27],        // 29
    &[30, 6, 4, 1],   // 30
    &[31, 28],        // 31
];

/// Generates a two-level pseudo-random binary sequence from a maximal-length
/// LFSR. `seed` selects the initial register state (mapped into `1..2^m-1`,
/// never all-zero); bit 1 emits `levels.0`, bit 0 emits `levels.1`. Sequences
/// longer than the period `2^m - 1` wrap periodically.
pub fn generate_prbs(
    register_length: u32,
    total_length: usize,
    seed: u64,
    levels: (f64, f64),
) -> Result<Vec<f64>> {
    if !(2..=31).contains(&register_length) {
        return Err(EivarxError::InvalidArgument(format!(
            "PRBS register length must be in [2, 31], got {register_length}"
        )));
    }
    let m = register_length;
    let taps = LFSR_TAPS[(m - 2) as usize];
    let period = (1u64 << m) - 1;
    let mut state = (seed % period) + 1;
    let mut out = Vec::with_capacity(total_length);
    for _ in 0..total_length {
        let bit = state & 1;
        out.push(if bit == 1 { levels.0 } else { levels.1 });
        let feedback = taps.iter().fold(0u64, |acc, &p| acc ^ (state >> (m - p)));
        state = (state >> 1) | ((feedback & 1) << (m - 1));
    }
    Ok(out)
}

/// Simulates the noise-free difference equation with zero initial conditions
/// (indices before the start of the record read as zero). The first
/// `eta` samples are transient.
pub fn simulate_system(model: &DifferenceEquation, u_star: &[f64]) -> Result<Vec<f64>> {
    if !model.is_stable() {
        return Err(EivarxError::InvalidModel(
            "cannot simulate an unstable model".into(),
        ));
    }
    let needed = model.eta() + 1;
    if u_star.len() < needed {
        return Err(EivarxError::InsufficientData { needed, got: u_star.len() });
    }
    let a = model.a();
    let n = u_star.len();
    let mut y = vec![0.0; n];
    for k in 0..n {
        let mut acc = 0.0;
        for (i, &ai) in a.iter().enumerate() {
            if k > i {
                acc -= ai * y[k - i - 1];
            }
        }
        for (j, &bj) in model.b().iter().enumerate() {
            let lag = model.delay() + j;
            if k >= lag {
                acc += bj * u_star[k - lag];
            }
        }
        y[k] = acc;
    }
    Ok(y)
}

/// A deterministic standard-normal stream: Box-Muller over ChaCha12, one
/// independent substream per `(seed, stream)` pair.
pub struct GaussianStream {
    rng: ChaCha12Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    fn uniform_open01(&mut self) -> f64 {
        // (0, 1]: a zero argument to ln() is impossible
        ((self.rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / 9007199254740992.0)
    }

    fn uniform_halfopen01(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Next standard-normal variate.
    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let r = (-2.0 * self.uniform_open01().ln()).sqrt();
        let phi = 2.0 * std::f64::consts::PI * self.uniform_halfopen01();
        self.spare = Some(r * phi.sin());
        r * phi.cos()
    }

    /// Fills a vector with N(0, sigma2) variates.
    pub fn sample_vec(&mut self, n: usize, sigma2: f64) -> Vec<f64> {
        let sd = sigma2.sqrt();
        (0..n).map(|_| sd * self.next_standard()).collect()
    }
}

/// Noisy and (optionally) noise-free input-output records of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPair {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub u_star: Option<Vec<f64>>,
    pub y_star: Option<Vec<f64>>,
    pub seed: u64,
}

impl TimeSeriesPair {
    pub fn new(
        u: Vec<f64>,
        y: Vec<f64>,
        u_star: Option<Vec<f64>>,
        y_star: Option<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        let n = u.len();
        let all_equal = y.len() == n
            && u_star.as_ref().is_none_or(|v| v.len() == n)
            && y_star.as_ref().is_none_or(|v| v.len() == n);
        if !all_equal {
            return Err(EivarxError::InvalidArgument(
                "all stored series must share the same length".into(),
            ));
        }
        Ok(Self { u, y, u_star, y_star, seed })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Colored-noise burn-in length, chosen long enough that the retained
/// samples are effectively stationary.
fn burn_in(eta: usize) -> usize {
    100.max(50 * eta)
}

/// Corrupts noise-free records per the EIV-ARX noise model: the output noise
/// `v_y` satisfies `A(q^-1) v_y = e_y` with `e_y` white Gaussian, the input
/// noise is white Gaussian, and the two streams are independent substreams
/// of `seed`. The AR recursion for `v_y` is warmed up over a discarded
/// burn-in so the retained noise is stationary.
pub fn corrupt_measurements(
    y_star: &[f64],
    u_star: &[f64],
    model: &DifferenceEquation,
    noise: &NoiseSpec,
    seed: u64,
) -> Result<TimeSeriesPair> {
    if y_star.len() != u_star.len() {
        return Err(EivarxError::InvalidArgument(
            "y_star and u_star must have equal length".into(),
        ));
    }
    if !model.is_stable() {
        return Err(EivarxError::InvalidModel(
            "cannot build ARX noise from an unstable model".into(),
        ));
    }
    let n = y_star.len();
    let burn = burn_in(model.eta());
    let a = model.a();

    // Output noise: AR recursion driven by e_y, burn-in discarded.
    let mut ey_stream = GaussianStream::new(seed, 1);
    let e_y = ey_stream.sample_vec(burn + n, noise.sigma2_ey);
    let mut v_full = vec![0.0; burn + n];
    for k in 0..burn + n {
        let mut acc = e_y[k];
        for (i, &ai) in a.iter().enumerate() {
            if k > i {
                acc -= ai * v_full[k - i - 1];
            }
        }
        v_full[k] = acc;
    }

    let mut eu_stream = GaussianStream::new(seed, 2);
    let e_u = eu_stream.sample_vec(n, noise.sigma2_eu);

    let y = y_star.iter().zip(&v_full[burn..]).map(|(s, v)| s + v).collect();
    let u = u_star.iter().zip(&e_u).map(|(s, e)| s + e).collect();
    TimeSeriesPair::new(u, y, Some(u_star.to_vec()), Some(y_star.to_vec()), seed)
}

/// Ratio of sample variances `var(signal) / var(noise)`.
pub fn snr(signal: &[f64], noise: &[f64]) -> Result<f64> {
    if signal.len() != noise.len() {
        return Err(EivarxError::InvalidArgument(
            "signal and noise must have equal length".into(),
        ));
    }
    let vn = crate::stats::variance(noise);
    if vn == 0.0 {
        return Err(EivarxError::InvalidArgument(
            "noise has zero variance".into(),
        ));
    }
    Ok(crate::stats::variance(signal) / vn)
}
