//! Difference-equation model, its flattened parameter-vector form, and the
//! white-noise specification.

use nalgebra::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{EivarxError, Result};

/// Stability margin: all AR roots must satisfy |root| < 1 - STABILITY_MARGIN.
pub const STABILITY_MARGIN: f64 = 1e-8;

/// A SISO linear difference equation
///
/// ```text
/// y[k] + a_1 y[k-1] + ... + a_ny y[k-ny] = b_D u[k-D] + ... + b_nu u[k-nu]
/// ```
///
/// with monic AR convention (the leading output coefficient is 1 and never
/// stored). `b` holds the input coefficients starting at the delay `D`, so
/// `b.len() == n_u - D + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceEquation {
    a: Vec<f64>,
    b: Vec<f64>,
    delay: usize,
}

impl DifferenceEquation {
    /// Builds a model and verifies stability of its AR polynomial.
    pub fn new(a: Vec<f64>, b: Vec<f64>, delay: usize) -> Result<Self> {
        let model = Self::new_unchecked(a, b, delay);
        if !model.is_stable() {
            return Err(EivarxError::InvalidModel(format!(
                "AR polynomial has roots on or outside the unit circle (radius {:.6})",
                model.spectral_radius()
            )));
        }
        Ok(model)
    }

    /// Builds a model without the stability check. Intermediate iterates of
    /// the estimation loop may be transiently unstable; callers project them
    /// back with [`DifferenceEquation::project_stable`].
    pub fn new_unchecked(a: Vec<f64>, b: Vec<f64>, delay: usize) -> Self {
        Self { a, b, delay }
    }

    /// AR coefficients `a_1..a_ny`.
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    /// Input coefficients `b_D..b_nu`.
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Input-output delay `D`.
    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Output order `n_y`.
    pub fn n_y(&self) -> usize {
        self.a.len()
    }

    /// Input order `n_u`. Zero when there are no input coefficients.
    pub fn n_u(&self) -> usize {
        if self.b.is_empty() {
            0
        } else {
            self.delay + self.b.len() - 1
        }
    }

    /// Process order `eta = max(n_y, n_u)`.
    pub fn eta(&self) -> usize {
        self.n_y().max(self.n_u())
    }

    /// Input coefficient `b_j` for any `j`, zero outside `D..=n_u`.
    pub fn b_at(&self, j: usize) -> f64 {
        if j < self.delay || j >= self.delay + self.b.len() {
            0.0
        } else {
            self.b[j - self.delay]
        }
    }

    /// Largest root magnitude of the AR characteristic polynomial
    /// `z^ny + a_1 z^(ny-1) + ... + a_ny`.
    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// True when every AR root lies strictly inside the unit circle
    /// (with margin [`STABILITY_MARGIN`]).
    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0 - STABILITY_MARGIN
    }

    /// Returns a copy whose AR roots are scaled to radius `0.999` if the
    /// model is unstable; otherwise returns the model unchanged.
    pub fn project_stable(&self) -> Self {
        let a = project_stable_ar(&self.a);
        Self { a, b: self.b.clone(), delay: self.delay }
    }
}

/// Largest root magnitude of `z^n + a_1 z^(n-1) + ... + a_n`, by bounded
/// Durand-Kerner iteration. Trailing zero coefficients only contribute roots
/// at the origin and are stripped first; non-finite coefficients count as
/// unstable.
pub fn spectral_radius(a: &[f64]) -> f64 {
    if a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let n = a.iter().rposition(|&v| v != 0.0).map_or(0, |p| p + 1);
    let a = &a[..n];
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return a[0].abs();
    }
    if n == 2 {
        // quadratic: z^2 + a1 z + a2
        let disc = a[0] * a[0] - 4.0 * a[1];
        return if disc >= 0.0 {
            let r1 = 0.5 * (-a[0] + disc.sqrt());
            let r2 = 0.5 * (-a[0] - disc.sqrt());
            r1.abs().max(r2.abs())
        } else {
            a[1].abs().sqrt()
        };
    }

    type C = Complex<f64>;
    let eval = |z: C| -> C {
        let mut acc = C::new(1.0, 0.0);
        for &ai in a {
            acc = acc * z + C::new(ai, 0.0);
        }
        acc
    };
    // Cauchy bound on the root moduli
    let bound = 1.0 + a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let seed = C::new(0.4, 0.9);
    let mut roots: Vec<C> = (0..n)
        .map(|k| seed.powu(k as u32 + 1) * bound)
        .collect();
    for _ in 0..500 {
        let mut shift = 0.0f64;
        for i in 0..n {
            let mut denom = C::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            if denom.norm() == 0.0 {
                denom = C::new(1e-300, 0.0);
            }
            let delta = eval(roots[i]) / denom;
            roots[i] -= delta;
            shift = shift.max(delta.norm());
        }
        if shift < 1e-13 * bound {
            break;
        }
    }
    roots.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Scales the roots of the AR polynomial to radius 0.999 when the polynomial
/// is unstable. Root scaling by `c` maps `a_i -> a_i c^i`, so no root
/// extraction is needed.
pub fn project_stable_ar(a: &[f64]) -> Vec<f64> {
    let rho = spectral_radius(a);
    if rho < 1.0 - STABILITY_MARGIN {
        return a.to_vec();
    }
    let c = 0.999 / rho;
    let mut scale = 1.0;
    a.iter()
        .map(|&ai| {
            scale *= c;
            ai * scale
        })
        .collect()
}

/// The flattened parameter vector of length `2(eta+1)`:
///
/// ```text
/// [1, a_1..a_ny, 0-pad, -b_D..-b_nu, 0-pad]
/// ```
///
/// laid out against the stacked sample `[y[k]..y[k-eta], u[k]..u[k-eta]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    entries: Vec<f64>,
}

impl ThetaVector {
    /// Flattens a model into its parameter vector.
    pub fn from_model(model: &DifferenceEquation) -> Self {
        let eta = model.eta();
        let mut entries = vec![0.0; 2 * (eta + 1)];
        entries[0] = 1.0;
        for (i, &ai) in model.a().iter().enumerate() {
            entries[1 + i] = ai;
        }
        for j in 0..=eta {
            entries[eta + 1 + j] = -model.b_at(j);
        }
        Self { entries }
    }

    /// Wraps a raw vector after normalizing the leading entry to 1.
    pub fn from_entries(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 || !entries.len().is_multiple_of(2) {
            return Err(EivarxError::InvalidArgument(format!(
                "parameter vector must have even length >= 2, got {}",
                entries.len()
            )));
        }
        let lead = entries[0];
        if lead == 0.0 || !lead.is_finite() {
            return Err(EivarxError::InvalidArgument(
                "parameter vector has zero or non-finite leading entry".into(),
            ));
        }
        let entries = entries.iter().map(|e| e / lead).collect();
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Process order implied by the vector length.
    pub fn eta(&self) -> usize {
        self.entries.len() / 2 - 1
    }

    /// Reads back a model with the given structure. The entries outside the
    /// `(delay, n_y, n_u)` support must be (numerically) zero; they are
    /// discarded.
    pub fn to_model(&self, delay: usize, n_y: usize, n_u: usize) -> Result<DifferenceEquation> {
        let eta = self.eta();
        if n_y.max(n_u) != eta {
            return Err(EivarxError::InvalidArgument(format!(
                "orders (n_y={n_y}, n_u={n_u}) inconsistent with vector of eta={eta}"
            )));
        }
        if n_u > 0 && delay > n_u {
            return Err(EivarxError::InvalidArgument(format!(
                "delay {delay} exceeds input order {n_u}"
            )));
        }
        let a = self.entries[1..=n_y].to_vec();
        let b = if n_u == 0 {
            Vec::new()
        } else {
            (delay..=n_u).map(|j| -self.entries[eta + 1 + j]).collect()
        };
        Ok(DifferenceEquation::new_unchecked(a, b, delay))
    }
}

/// Variances of the two driving white-noise sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma2_ey: f64,
    pub sigma2_eu: f64,
}

impl NoiseSpec {
    /// Both variances must be finite and non-negative. Zero is permitted for
    /// degenerate (noise-free) simulation; estimation paths require strictly
    /// positive values.
    pub fn new(sigma2_ey: f64, sigma2_eu: f64) -> Result<Self> {
        for (name, v) in [("sigma2_ey", sigma2_ey), ("sigma2_eu", sigma2_eu)] {
            if !v.is_finite() || v < 0.0 {
                return Err(EivarxError::InvalidArgument(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(Self { sigma2_ey, sigma2_eu })
    }
}
