use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::RingConfiguration;

/// Smooth periodic test functions on the macroscopic torus `[0, period)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant { value: f64 },
    Sine { mode: u32 },
    Cosine { mode: u32 },
    /// `exp(1 - 1/(1 - r²))` for `r = d/width < 1`, where `d` is the periodic
    /// distance to `center`.
    Bump { center: f64, width: f64 },
    /// Values on the lattice points `εx`, `x = 0..L`.
    Sampled { values: Vec<f64> },
}

impl TestFunction {
    /// `F(u)` on a torus of length `period`; `x` is the lattice index of
    /// `u = εx` and is only used by sampled functions.
    pub fn evaluate(&self, u: f64, x: usize, period: f64) -> f64 {
        match self {
            TestFunction::Constant { value } => *value,
            TestFunction::Sine { mode } => (2.0 * PI * *mode as f64 * u / period).sin(),
            TestFunction::Cosine { mode } => (2.0 * PI * *mode as f64 * u / period).cos(),
            TestFunction::Bump { center, width } => {
                let d = periodic_distance(u, *center, period);
                let r = d / width;
                if r >= 1.0 {
                    0.0
                } else {
                    (1.0 - 1.0 / (1.0 - r * r)).exp()
                }
            }
            TestFunction::Sampled { values } => values[x],
        }
    }

    /// Lattice values `F(εx)` for `x = 0..size`.
    pub fn grid(&self, size: usize, epsilon: f64) -> Result<Vec<f64>> {
        if let TestFunction::Sampled { values } = self {
            if values.len() != size {
                return Err(Error::param("sampled test function has the wrong length"));
            }
        }
        let period = epsilon * size as f64;
        Ok((0..size).map(|x| self.evaluate(epsilon * x as f64, x, period)).collect())
    }
}

fn periodic_distance(u: f64, v: f64, period: f64) -> f64 {
    let d = (u - v).rem_euclid(period);
    d.min(period - d)
}

/// `⟨Y^ε, F⟩ = √ε Σ_x (η(x) - ρ) F(εx)` on the periodic domain `[0, εL)`.
pub fn fluctuation_field(eta: &RingConfiguration, rho: f64, epsilon: f64, f: &TestFunction) -> Result<f64> {
    let grid = f.grid(eta.len(), epsilon)?;
    Ok(fluctuation_field_on(eta, rho, epsilon, &grid))
}

pub(crate) fn fluctuation_field_on(eta: &RingConfiguration, rho: f64, epsilon: f64, grid: &[f64]) -> f64 {
    let s: f64 = eta.occupancies().iter().zip(grid).map(|(&e, &f)| (e as f64 - rho) * f).sum();
    epsilon.sqrt() * s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MollifierShape {
    /// `ι(x) = max(0, 1 - |x|)`
    Triangular,
}

/// Approximation of the identity `ι_δ(u) = ι(u/δ)/δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mollifier {
    pub shape: MollifierShape,
    pub delta: f64,
    /// `κ = ∫ ι²`
    pub kappa: f64,
}

impl Mollifier {
    pub fn triangular(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::param("mollifier width must be positive"));
        }
        Ok(Self { shape: MollifierShape::Triangular, delta, kappa: 2.0 / 3.0 })
    }

    pub fn shape_value(&self, x: f64) -> f64 {
        match self.shape {
            MollifierShape::Triangular => (1.0 - x.abs()).max(0.0),
        }
    }

    /// Support of `ι` is `[-half_support, half_support]`.
    pub fn half_support(&self) -> f64 {
        match self.shape {
            MollifierShape::Triangular => 1.0,
        }
    }

    pub fn evaluate(&self, u: f64) -> f64 {
        self.shape_value(u / self.delta) / self.delta
    }

    /// `∫ ι²` by composite Simpson quadrature on `n` panels per unit.
    pub fn kappa_by_quadrature(&self, n: usize) -> f64 {
        let a = self.half_support();
        let panels = 2 * n * a.ceil() as usize;
        let h = 2.0 * a / panels as f64;
        let g = |x: f64| self.shape_value(x).powi(2);
        let mut s = g(-a) + g(a);
        for i in 1..panels {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(-a + i as f64 * h);
        }
        s * h / 3.0
    }

    /// Checks the stored `κ` against quadrature.
    pub fn check_kappa(&self) -> Result<()> {
        // the kink at 0 lies on a panel boundary, so Simpson is exact here
        let q = self.kappa_by_quadrature(64);
        if (q - self.kappa).abs() > 1e-12 {
            return Err(Error::InvariantViolation(format!("κ = {} but quadrature gives {q}", self.kappa)));
        }
        Ok(())
    }
}

fn check_scales(epsilon: f64, m: &Mollifier) -> Result<()> {
    if !(epsilon > 0.0) {
        return Err(Error::param("ε must be positive"));
    }
    if m.delta < 10.0 * epsilon {
        return Err(Error::param(format!("δ = {} must be at least 10ε = {}", m.delta, 10.0 * epsilon)));
    }
    Ok(())
}

/// `⟨Y^ε, ι_δ^{εx}⟩`, the field tested against the mollifier centred at `εx`.
pub fn mollified_field(eta: &RingConfiguration, rho: f64, epsilon: f64, m: &Mollifier, x: usize) -> Result<f64> {
    check_scales(epsilon, m)?;
    let reach = (m.half_support() * m.delta / epsilon).ceil() as i64;
    let mut s = 0.0;
    for d in -reach..=reach {
        let w = m.evaluate(epsilon * d as f64);
        if w != 0.0 {
            s += (eta.get(x as i64 + d) as f64 - rho) * w;
        }
    }
    Ok(epsilon.sqrt() * s)
}

/// Wick-corrected square `⟨Y^ε, ι_δ^{εx}⟩² - κχ/δ`.
pub fn wick_quadratic(eta: &RingConfiguration, rho: f64, chi: f64, epsilon: f64, m: &Mollifier, x: usize) -> Result<f64> {
    let y = mollified_field(eta, rho, epsilon, m, x)?;
    Ok(y * y - m.kappa * chi / m.delta)
}

/// Exact mean of the Wick-corrected square under a product measure: the
/// lattice Riemann sum `ε Σ ι_δ(εd)²` differs from `κ/δ` by a bias that
/// vanishes as `ε/δ → 0`.
pub fn wick_bias(chi: f64, epsilon: f64, m: &Mollifier) -> f64 {
    let reach = (m.half_support() * m.delta / epsilon).ceil() as i64;
    let s: f64 = (-reach..=reach).map(|d| m.evaluate(epsilon * d as f64).powi(2)).sum();
    chi * (epsilon * s - m.kappa / m.delta)
}

/// Field observables of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSample {
    pub epsilon: f64,
    pub tested: Vec<f64>,
    pub mollifier: Mollifier,
    pub wick: Vec<f64>,
}

impl FieldSample {
    pub fn measure(
        eta: &RingConfiguration,
        rho: f64,
        chi: f64,
        epsilon: f64,
        functions: &[TestFunction],
        mollifier: Mollifier,
        centers: &[usize],
    ) -> Result<Self> {
        mollifier.check_kappa()?;
        let tested = functions.iter().map(|f| fluctuation_field(eta, rho, epsilon, f)).collect::<Result<_>>()?;
        let wick = centers
            .iter()
            .map(|&x| wick_quadratic(eta, rho, chi, epsilon, &mollifier, x))
            .collect::<Result<_>>()?;
        Ok(Self { epsilon, tested, mollifier, wick })
    }
}
