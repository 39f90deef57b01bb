//! Stochastic Burgers field with coefficients read off the lattice model,
//! and the linear stationary variance check.

use kawasaki_kpz::gradient;
use kawasaki_kpz::kmc::{replica_rng, Mollifier};
use kawasaki_kpz::lattice::{builtin_rate, GibbsSpec, RateFamily};
use kawasaki_kpz::sbe::{self, match_microscopic, FieldState, SbeCoefficients};
use kawasaki_kpz::thermo::{standard_rho_grid, ThermoCurve};

fn main() -> kawasaki_kpz::Result<()> {
    let c = builtin_rate(&RateFamily::SpeedChange { b: 0.3 })?;
    let omega = gradient::solve_gradient_condition(&c, 1)?.omega;
    let curve = ThermoCurve::compute(&c, &omega, &GibbsSpec::product(0.0), &standard_rho_grid(), 1.0)?;
    let coeffs = match_microscopic(&curve, 0.4, 1.0)?;
    println!("D = {:.4}, χ = {:.4}, λ = {:.4}", coeffs.d, coeffs.chi, coeffs.lambda);

    let cells = 64;
    let dx = 1.0 / cells as f64;
    let m = Mollifier::triangular(0.1)?;
    let mut s = FieldState::zeros(cells, dx, coeffs, m)?;
    let dt = 0.8 * s.max_dt();
    let mut rng = replica_rng(2, 0);
    for _ in 0..5000 {
        s = sbe::step(&s, dt, &mut rng)?;
    }
    println!("t = {:.3}: mass {:.2e}, Σ Y² Δx = {:.3}", s.time, s.mass(), s.quadratic());

    let linear = SbeCoefficients { lambda: 0.0, ..coeffs };
    let tpl = FieldState::zeros(cells, dx, linear, m)?;
    let (v, se) = sbe::measure_stationary_variance(&tpl, dt, 2000, 5000, 4, 3)?;
    println!("cell variance {v:.3} ± {se:.3}, predicted {:.3}", sbe::ou_stationary_variance(&linear, cells, dx, dt));
    Ok(())
}
