//! Prints χ, D, H, λ and the Einstein residual for the speed-change model.

use kawasaki_kpz::gradient;
use kawasaki_kpz::lattice::{builtin_rate, GibbsSpec, RateFamily};
use kawasaki_kpz::thermo::ThermoCurve;

fn main() -> kawasaki_kpz::Result<()> {
    let c = builtin_rate(&RateFamily::SpeedChange { b: 0.3 })?;
    let omega = gradient::solve_gradient_condition(&c, 1)?.omega;
    let grid: Vec<f64> = (1..10).map(|i| i as f64 / 10.0).collect();
    let curve = ThermoCurve::compute(&c, &omega, &GibbsSpec::product(0.0), &grid, 1.0)?;
    print!("{}", curve.to_csv());
    Ok(())
}
