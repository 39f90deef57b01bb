//! Macroscopic coefficients: `χ`, `D`, the flux `H`, the KPZ coupling
//! `λ = (a/2) H''` and the second-order Einstein relation
//! `∂λ/∂a = ½ (χD)''`.
//!
//! For product invariant measures every static average is a polynomial in
//! `ρ` (`η(A) ↦ ρ^{|A|}`) and all derivatives are exact. Otherwise averages
//! come from transfer matrices and derivatives from Richardson-extrapolated
//! central differences.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{self, TransferMatrix};
use crate::lattice::{GibbsSpec, LocalFunction, RateTable};

/// `Σ_n c_n ρ^n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityPolynomial {
    coefficients: Vec<f64>,
}

impl DensityPolynomial {
    pub fn new(mut coefficients: Vec<f64>) -> Self {
        if coefficients.is_empty() {
            coefficients.push(0.0);
        }
        Self { coefficients }
    }

    /// `∫ f dν_ρ` under the Bernoulli(ρ) product measure.
    pub fn from_local(f: &LocalFunction) -> Self {
        let mut coefficients = vec![0.0; f.width() + 1];
        for (m, &c) in f.coefficients().iter().enumerate() {
            coefficients[m.count_ones() as usize] += c;
        }
        Self::new(coefficients)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn eval(&self, rho: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * rho + c)
    }

    pub fn derivative(&self) -> Self {
        if self.coefficients.len() <= 1 {
            return Self::new(vec![0.0]);
        }
        Self::new(self.coefficients.iter().enumerate().skip(1).map(|(n, &c)| n as f64 * c).collect())
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = vec![0.0; self.coefficients.len() + other.coefficients.len() - 1];
        for (i, a) in self.coefficients.iter().enumerate() {
            for (j, b) in other.coefficients.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Self::new(out)
    }

    /// `ρ(1 - ρ)`.
    pub fn bernoulli_variance() -> Self {
        Self::new(vec![0.0, 1.0, -1.0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ExactPolynomial,
    FiniteDifference,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::ExactPolynomial => "exact-polynomial",
            Method::FiniteDifference => "finite-difference",
        })
    }
}

/// `f̃(ρ)` with its first two derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticAverage {
    pub value: f64,
    pub first: f64,
    pub second: f64,
    pub method: Method,
    /// Estimated absolute error of the derivatives (0 for exact paths).
    pub error: f64,
}

/// Base step of the difference stencil.
pub const FD_STEP: f64 = 1e-3;

/// Step actually used at `rho`, shrunk near the boundary.
fn fd_step(rho: f64) -> Result<f64> {
    let room = rho.min(1.0 - rho);
    let h = FD_STEP.min(0.25 * room);
    if h < 1e-6 {
        return Err(Error::param(format!("ρ = {rho} too close to 0 or 1 for finite differences")));
    }
    Ok(h)
}

/// Central differences at steps `h` and `h/2` with one Richardson level.
/// Returns `(f'(ρ), f''(ρ), error estimate)`.
fn richardson(g: impl Fn(f64) -> Result<f64>, rho: f64) -> Result<(f64, f64, f64)> {
    let h = fd_step(rho)?;
    let f0 = g(rho)?;
    let (fp, fm) = (g(rho + h)?, g(rho - h)?);
    let (fp2, fm2) = (g(rho + h / 2.0)?, g(rho - h / 2.0)?);
    let d1h = (fp - fm) / (2.0 * h);
    let d1h2 = (fp2 - fm2) / h;
    let d2h = (fp - 2.0 * f0 + fm) / (h * h);
    let d2h2 = (fp2 - 2.0 * f0 + fm2) / (h * h / 4.0);
    let d1 = (4.0 * d1h2 - d1h) / 3.0;
    let d2 = (4.0 * d2h2 - d2h) / 3.0;
    let err = (d1 - d1h2).abs().max((d2 - d2h2).abs());
    Ok((d1, d2, err))
}

fn check_rho(rho: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param(format!("density {rho} outside [0, 1]")));
    }
    Ok(())
}

/// `f̃(ρ) = ∫ f dν_ρ`, `f̃'(ρ)` and `f̃''(ρ)`.
pub fn static_average(f: &LocalFunction, spec: &GibbsSpec, rho: f64) -> Result<StaticAverage> {
    check_rho(rho)?;
    if spec.is_product() {
        let p = DensityPolynomial::from_local(f);
        let d = p.derivative();
        return Ok(StaticAverage {
            value: p.eval(rho),
            first: d.eval(rho),
            second: d.derivative().eval(rho),
            method: Method::ExactPolynomial,
            error: 0.0,
        });
    }
    let g = |r: f64| -> Result<f64> { TransferMatrix::new(&gibbs::spec_at_density(spec, r)?)?.expectation(f) };
    let value = g(rho)?;
    let (first, second, error) = richardson(g, rho)?;
    Ok(StaticAverage { value, first, second, method: Method::FiniteDifference, error })
}

/// `D(ρ) = d/dρ ∫ ω dν_ρ`.
pub fn diffusivity(omega: &LocalFunction, spec: &GibbsSpec, rho: f64) -> Result<f64> {
    Ok(static_average(omega, spec, rho)?.first)
}

/// `H(ρ) = ∫ c η(0)(1 - η(1)) dν_ρ` with `H'` and `H''`.
pub fn flux(c: &RateTable, spec: &GibbsSpec, rho: f64) -> Result<StaticAverage> {
    static_average(&c.current_observable(), spec, rho)
}

/// `λ = (a/2) H''(ρ)`, with a particle moving from site 0 to site 1 counted
/// as positive current.
pub fn kpz_lambda(a: f64, c: &RateTable, spec: &GibbsSpec, rho: f64) -> Result<f64> {
    Ok(0.5 * a * flux(c, spec, rho)?.second)
}

/// `v = H'(ρ)`, the velocity of the frame in which first-order transport vanishes.
pub fn characteristic_velocity(c: &RateTable, spec: &GibbsSpec, rho: f64) -> Result<f64> {
    Ok(flux(c, spec, rho)?.first)
}

/// `χ(ρ) D(ρ)` and its second derivative, computed without touching the
/// current observable.
///
/// Product measures: `χ = ρ(1-ρ)` times the derivative of the polynomial
/// `ω̃`. Otherwise `χD = Σ_x Cov(ω(0), η(x))` (the response of `ω̃` to the
/// fugacity) evaluated spectrally, differentiated twice numerically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityCurvature {
    pub chi: f64,
    pub diffusivity: f64,
    pub chi_d: f64,
    pub chi_d_second: f64,
    pub method: Method,
    pub error: f64,
}

pub fn mobility_curvature(omega: &LocalFunction, spec: &GibbsSpec, rho: f64) -> Result<MobilityCurvature> {
    check_rho(rho)?;
    if spec.is_product() {
        let chi = DensityPolynomial::bernoulli_variance();
        let d = DensityPolynomial::from_local(omega).derivative();
        let chi_d = chi.mul(&d);
        return Ok(MobilityCurvature {
            chi: chi.eval(rho),
            diffusivity: d.eval(rho),
            chi_d: chi_d.eval(rho),
            chi_d_second: chi_d.derivative().derivative().eval(rho),
            method: Method::ExactPolynomial,
            error: 0.0,
        });
    }
    let response = |r: f64| -> Result<f64> {
        TransferMatrix::new(&gibbs::spec_at_density(spec, r)?)?.cross_susceptibility(omega)
    };
    let chi = gibbs::compressibility(spec, rho)?.chi;
    let chi_d = response(rho)?;
    let (_, chi_d_second, error) = richardson(response, rho)?;
    Ok(MobilityCurvature {
        chi,
        diffusivity: diffusivity(omega, spec, rho)?,
        chi_d,
        chi_d_second,
        method: Method::FiniteDifference,
        error,
    })
}

/// One row of the Einstein-relation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EinsteinRow {
    pub rho: f64,
    /// `∂λ/∂a` from the a-grid, through the current observable.
    pub dlambda_da: f64,
    /// `½ (χD)''` through the compressibility and `ω`.
    pub half_chi_d_second: f64,
    pub residual: f64,
    /// Largest deviation of `λ(a)` from linearity over the a-grid.
    pub linearity_defect: f64,
    pub method: Method,
}

/// Compares `∂λ/∂a` with `½ d²/dρ² (χD)` on every density of the grid.
pub fn einstein_relation_check(
    c: &RateTable,
    omega: &LocalFunction,
    spec: &GibbsSpec,
    rho_grid: &[f64],
    a_grid: &[f64],
) -> Result<Vec<EinsteinRow>> {
    if a_grid.len() < 2 {
        return Err(Error::param("a-grid needs at least two values"));
    }
    let mut rows = Vec::with_capacity(rho_grid.len());
    for &rho in rho_grid {
        let hpp = flux(c, spec, rho)?;
        let lambdas: Vec<f64> = a_grid.iter().map(|&a| 0.5 * a * hpp.second).collect();
        let (a0, l0) = (a_grid[0], lambdas[0]);
        let (a1, l1) = (a_grid[a_grid.len() - 1], lambdas[lambdas.len() - 1]);
        let slope = (l1 - l0) / (a1 - a0);
        let linearity_defect = a_grid
            .iter()
            .zip(&lambdas)
            .map(|(&a, &l)| (l - (l0 + slope * (a - a0))).abs())
            .fold(0.0, f64::max);
        let mc = mobility_curvature(omega, spec, rho)?;
        let half = 0.5 * mc.chi_d_second;
        let method = if hpp.method == Method::ExactPolynomial && mc.method == Method::ExactPolynomial {
            Method::ExactPolynomial
        } else {
            Method::FiniteDifference
        };
        rows.push(EinsteinRow {
            rho,
            dlambda_da: slope,
            half_chi_d_second: half,
            residual: (slope - half).abs(),
            linearity_defect,
            method,
        });
    }
    Ok(rows)
}

/// One density of a [`ThermoCurve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermoRow {
    pub rho: f64,
    pub chi: f64,
    pub d: f64,
    pub h: f64,
    pub hp: f64,
    pub hpp: f64,
    pub chi_d_pp: f64,
    pub lambda: f64,
    pub einstein_residual: f64,
    pub method: Method,
    pub scale: f64,
}

/// Per-density table of the macroscopic coefficients for one model and one
/// asymmetry strength `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermoCurve {
    pub a: f64,
    pub rows: Vec<ThermoRow>,
}

pub const THERMO_CSV_HEADER: &str = "rho,chi,D,H,Hp,Hpp,chiD_pp,lambda,einstein_residual,method,scale";

impl ThermoCurve {
    pub fn compute(c: &RateTable, omega: &LocalFunction, spec: &GibbsSpec, rho_grid: &[f64], a: f64) -> Result<Self> {
        let mut rows = Vec::with_capacity(rho_grid.len());
        for &rho in rho_grid {
            let h = flux(c, spec, rho)?;
            let mc = mobility_curvature(omega, spec, rho)?;
            let method = if h.method == Method::ExactPolynomial && mc.method == Method::ExactPolynomial {
                Method::ExactPolynomial
            } else {
                Method::FiniteDifference
            };
            rows.push(ThermoRow {
                rho,
                chi: mc.chi,
                d: mc.diffusivity,
                h: h.value,
                hp: h.first,
                hpp: h.second,
                chi_d_pp: mc.chi_d_second,
                lambda: 0.5 * a * h.second,
                einstein_residual: (0.5 * h.second - 0.5 * mc.chi_d_second).abs(),
                method,
                scale: c.normalization(),
            });
        }
        Ok(Self { a, rows })
    }

    /// Row whose density equals `rho` to `1e-12`.
    pub fn row(&self, rho: f64) -> Option<&ThermoRow> {
        self.rows.iter().find(|r| (r.rho - rho).abs() <= 1e-12)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(THERMO_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.rho, r.chi, r.d, r.h, r.hp, r.hpp, r.chi_d_pp, r.lambda, r.einstein_residual, r.method, r.scale
            ));
        }
        out
    }
}

/// `ρ = 0.01, 0.02, …, 0.99`.
pub fn standard_rho_grid() -> Vec<f64> {
    (1..100).map(|i| i as f64 / 100.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{builtin_rate, speed_change_omega, RateFamily};

    #[test]
    fn pair_average_is_rho_squared() {
        let s = static_average(&LocalFunction::monomial(&[0, 1]), &GibbsSpec::product(0.0), 0.3).unwrap();
        assert!((s.value - 0.09).abs() < 1e-16);
        assert!((s.first - 0.6).abs() < 1e-15);
        assert_eq!(s.second, 2.0);
        assert_eq!(s.method, Method::ExactPolynomial);
    }

    #[test]
    fn constant_has_zero_derivatives() {
        let s = static_average(&LocalFunction::constant(3.5), &GibbsSpec::product(0.0), 0.7).unwrap();
        assert_eq!((s.value, s.first, s.second), (3.5, 0.0, 0.0));
        let s = static_average(&LocalFunction::constant(3.5), &GibbsSpec::nearest_neighbor(1.0, 0.4, 0.0), 0.7)
            .unwrap();
        assert!((s.value - 3.5).abs() < 1e-12);
        assert!(s.first.abs() < 1e-8 && s.second.abs() < 1e-4);
    }

    #[test]
    fn speed_change_omega_average() {
        let b = 0.35;
        let s = static_average(&speed_change_omega(b), &GibbsSpec::product(0.0), 0.4).unwrap();
        assert!((s.value - (0.4 + b * 0.16)).abs() < 1e-15);
        assert!((s.first - (1.0 + 2.0 * b * 0.4)).abs() < 1e-15);
    }

    #[test]
    fn ssep_flux_and_lambda() {
        let ssep = builtin_rate(&RateFamily::Ssep).unwrap();
        let spec = GibbsSpec::product(0.0);
        for &rho in &[0.0, 0.3, 0.5, 1.0] {
            let h = flux(&ssep, &spec, rho).unwrap();
            assert!((h.value - rho * (1.0 - rho)).abs() < 1e-15);
            assert_eq!(h.second, -2.0);
        }
        assert!((kpz_lambda(1.0, &ssep, &spec, 0.2).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(kpz_lambda(0.0, &ssep, &spec, 0.2).unwrap(), 0.0);
        assert!(characteristic_velocity(&ssep, &spec, 0.5).unwrap().abs() < 1e-15);
        assert!((characteristic_velocity(&ssep, &spec, 0.3).unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn polynomial_algebra() {
        let p = DensityPolynomial::new(vec![1.0, 2.0, 3.0]);
        assert_eq!(p.eval(2.0), 17.0);
        assert_eq!(p.derivative().coefficients(), &[2.0, 6.0]);
        assert_eq!(p.mul(&DensityPolynomial::new(vec![0.0, 1.0])).coefficients(), &[0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn boundary_densities_are_rejected_for_finite_differences() {
        let spec = GibbsSpec::nearest_neighbor(1.0, 0.5, 0.0);
        assert!(static_average(&LocalFunction::occupation(0), &spec, 1e-7).is_err());
        assert!(static_average(&LocalFunction::occupation(0), &spec, 1.5).is_err());
    }
}
