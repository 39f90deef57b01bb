//! Explicit lattice integrator for the mollified stochastic Burgers equation
//! `∂_t Y = D ΔY + λ ∇(Y ∗ ι_δ)² + √(2χD) ∇W` on a periodic grid.
//!
//! All three terms are written as differences of bond fluxes, so the total
//! mass `Σ Y_i Δx` changes only by rounding.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kmc::{replica_rng, Mollifier};
use crate::thermo::ThermoCurve;

/// Coefficients of the equation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbeCoefficients {
    pub d: f64,
    pub chi: f64,
    pub lambda: f64,
}

impl SbeCoefficients {
    /// `√(2χD)`
    pub fn noise_amplitude(&self) -> f64 {
        (2.0 * self.chi * self.d).sqrt()
    }
}

/// Reads `D`, `χ` and `λ = (a/2) H''` from the curve row at exactly `rho`.
pub fn match_microscopic(curve: &ThermoCurve, rho: f64, a: f64) -> Result<SbeCoefficients> {
    let row = curve.row(rho).ok_or_else(|| {
        Error::param(format!("no curve row at ρ = {rho}; interpolation is not supported"))
    })?;
    // adding 0.0 turns a negative zero into +0
    Ok(SbeCoefficients { d: row.d, chi: row.chi, lambda: 0.5 * a * row.hpp + 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    pub dx: f64,
    pub values: Vec<f64>,
    pub time: f64,
    pub coefficients: SbeCoefficients,
    pub mollifier: Mollifier,
    /// `ι_δ(jΔx) Δx` for `j = -reach..=reach`.
    #[serde(skip)]
    kernel: Vec<f64>,
}

impl FieldState {
    pub fn new(values: Vec<f64>, dx: f64, coefficients: SbeCoefficients, mollifier: Mollifier) -> Result<Self> {
        let m = values.len();
        if m < 3 {
            return Err(Error::param("need at least three cells"));
        }
        if !(dx > 0.0) {
            return Err(Error::param("Δx must be positive"));
        }
        if coefficients.d < 0.0 || coefficients.chi < 0.0 {
            return Err(Error::param("D and χ must be non-negative"));
        }
        if mollifier.delta < 2.0 * dx {
            return Err(Error::param(format!("δ = {} must be at least 2Δx = {}", mollifier.delta, 2.0 * dx)));
        }
        let reach = (mollifier.half_support() * mollifier.delta / dx).ceil() as i64;
        if 2 * reach + 1 > m as i64 {
            return Err(Error::param("mollifier wider than the grid"));
        }
        let kernel = (-reach..=reach).map(|j| mollifier.evaluate(j as f64 * dx) * dx).collect();
        Ok(Self { dx, values, time: 0.0, coefficients, mollifier, kernel })
    }

    pub fn zeros(cells: usize, dx: f64, coefficients: SbeCoefficients, mollifier: Mollifier) -> Result<Self> {
        Self::new(vec![0.0; cells], dx, coefficients, mollifier)
    }

    pub fn cells(&self) -> usize {
        self.values.len()
    }

    /// `Σ Y_i Δx`
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.dx
    }

    /// `Σ Y_i² Δx`
    pub fn quadratic(&self) -> f64 {
        self.values.iter().map(|y| y * y).sum::<f64>() * self.dx
    }

    /// Largest stable step, `Δx² / (4D)`.
    pub fn max_dt(&self) -> f64 {
        if self.coefficients.d == 0.0 {
            f64::INFINITY
        } else {
            self.dx * self.dx / (4.0 * self.coefficients.d)
        }
    }

    /// `(Y ∗ ι_δ)_i` with periodic wrap.
    pub fn mollified(&self) -> Vec<f64> {
        let m = self.values.len();
        let reach = (self.kernel.len() / 2) as isize;
        (0..m)
            .map(|i| {
                self.kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * self.values[(i as isize - (k as isize - reach)).rem_euclid(m as isize) as usize])
                    .sum()
            })
            .collect()
    }
}

/// One Euler–Maruyama step with the bond Gaussians `noise[i]` living on
/// `(i, i+1)`.
pub fn step_with(state: &FieldState, dt: f64, noise: &[f64]) -> Result<FieldState> {
    if !(dt > 0.0) || dt > state.max_dt() {
        return Err(Error::param(format!("dt = {dt} violates the stability bound Δx²/(4D) = {}", state.max_dt())));
    }
    let m = state.cells();
    if noise.len() != m {
        return Err(Error::param("one Gaussian per bond is required"));
    }
    let SbeCoefficients { d, lambda, .. } = state.coefficients;
    let dx = state.dx;
    let y = &state.values;
    let sigma = state.coefficients.noise_amplitude() * (dt / dx).sqrt();
    let squared: Option<Vec<f64>> = (lambda != 0.0).then(|| state.mollified().iter().map(|v| v * v).collect());
    // integrated flux across bond (i, i+1) over the step, divided by Δx
    let flux: Vec<f64> = (0..m)
        .map(|i| {
            let j = if i + 1 == m { 0 } else { i + 1 };
            let mut f = -d * dt * (y[j] - y[i]) / (dx * dx);
            if let Some(q) = &squared {
                f -= lambda * dt * 0.5 * (q[j] + q[i]) / dx;
            }
            f - sigma * noise[i] / dx
        })
        .collect();
    let values = (0..m)
        .map(|i| {
            let left = flux[if i == 0 { m - 1 } else { i - 1 }];
            y[i] - (flux[i] - left)
        })
        .collect();
    Ok(FieldState { values, time: state.time + dt, ..state.clone() })
}

pub fn step<R: Rng + ?Sized>(state: &FieldState, dt: f64, rng: &mut R) -> Result<FieldState> {
    let noise: Vec<f64> = if state.coefficients.chi == 0.0 || state.coefficients.d == 0.0 {
        vec![0.0; state.cells()]
    } else {
        (0..state.cells()).map(|_| rng.sample(StandardNormal)).collect()
    };
    step_with(state, dt, &noise)
}

/// Stationary per-cell variance of the discrete Ornstein–Uhlenbeck chain
/// (`λ = 0`, zero initial mass):
/// `(χ/Δx) (1/M) Σ_{k≠0} 2/(2 - dt D μ_k)` with `μ_k = (4/Δx²) sin²(πk/M)`.
/// Tends to `χ/Δx` as `dt → 0, M → ∞`.
pub fn ou_stationary_variance(coefficients: &SbeCoefficients, cells: usize, dx: f64, dt: f64) -> f64 {
    let m = cells as f64;
    let s: f64 = (1..cells)
        .map(|k| {
            let mu = 4.0 / (dx * dx) * (std::f64::consts::PI * k as f64 / m).sin().powi(2);
            2.0 / (2.0 - dt * coefficients.d * mu)
        })
        .sum();
    coefficients.chi / dx * s / m
}

/// Bound on `|A_num(t)/A_exact(t) - 1|` for a single Fourier mode of
/// wavenumber `k` under the noise-free heat flow. The three-point Laplacian
/// shifts the decay rate by at most `D k⁴ Δx²/12` and
/// explicit Euler by at most `D² k⁴ dt / (2(1 - dt D k²))`, both per unit time.
pub fn heat_mode_error_bound(d: f64, k: f64, dx: f64, dt: f64, t: f64) -> f64 {
    let a = dt * d * k * k;
    let rate = d * k.powi(4) * (dx * dx / 12.0 + d * dt / (2.0 * (1.0 - a)));
    (rate * t).exp_m1()
}

/// Time-averaged per-cell variance `(1/M) Σ Y_i²` over `samples` steps after
/// `burn_in` steps, starting from zero; mean and standard error across replicas.
pub fn measure_stationary_variance(
    template: &FieldState,
    dt: f64,
    burn_in: usize,
    samples: usize,
    replicas: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let per: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let mut s = FieldState { values: vec![0.0; template.cells()], time: 0.0, ..template.clone() };
            for _ in 0..burn_in {
                s = step(&s, dt, &mut rng)?;
            }
            let mut acc = 0.0;
            for _ in 0..samples {
                s = step(&s, dt, &mut rng)?;
                acc += s.values.iter().map(|y| y * y).sum::<f64>() / s.cells() as f64;
            }
            Ok(acc / samples as f64)
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let mean = per.iter().sum::<f64>() / n;
    let var = per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs(d: f64, chi: f64, lambda: f64) -> SbeCoefficients {
        SbeCoefficients { d, chi, lambda }
    }

    #[test]
    fn rejects_unstable_steps_and_thin_mollifiers() {
        let m = Mollifier::triangular(0.1).unwrap();
        let s = FieldState::zeros(32, 1.0 / 32.0, coeffs(1.0, 0.25, 0.0), m).unwrap();
        assert!(step_with(&s, 2.0 * s.max_dt(), &vec![0.0; 32]).is_err());
        let thin = Mollifier::triangular(0.01).unwrap();
        assert!(FieldState::zeros(32, 1.0 / 32.0, coeffs(1.0, 0.25, 0.0), thin).is_err());
    }

    #[test]
    fn zero_state_stays_zero() {
        let m = Mollifier::triangular(0.1).unwrap();
        let mut s = FieldState::zeros(32, 1.0 / 32.0, coeffs(1.0, 0.0, -3.0), m).unwrap();
        let mut rng = replica_rng(1, 0);
        for _ in 0..50 {
            s = step(&s, s.max_dt(), &mut rng).unwrap();
        }
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mass_conserved_with_all_terms() {
        let m = Mollifier::triangular(0.1).unwrap();
        let vals: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin() + 0.3).collect();
        let mut s = FieldState::new(vals, 0.025, coeffs(1.0, 0.25, -1.0), m).unwrap();
        let mut rng = replica_rng(2, 0);
        for _ in 0..200 {
            let before = s.mass();
            s = step(&s, 0.5 * s.max_dt(), &mut rng).unwrap();
            assert!((s.mass() - before).abs() <= 1e-12);
        }
    }

    #[test]
    fn mollified_constant_is_constant() {
        let m = Mollifier::triangular(0.2).unwrap();
        let s = FieldState::new(vec![2.0; 50], 0.02, coeffs(1.0, 0.0, 0.0), m).unwrap();
        for v in s.mollified() {
            assert!((v - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ou_prediction_limits() {
        let c = coeffs(1.0, 0.25, 0.0);
        let v = ou_stationary_variance(&c, 1000, 1e-3, 1e-15);
        assert!((v - 0.25e3 * 999.0 / 1000.0).abs() < 1e-6);
    }
}
