//! Solves the gradient condition for a few rate families and prints the
//! potential ω and residual.

use kawasaki_kpz::gradient::{self, Verdict};
use kawasaki_kpz::lattice::{builtin_rate, GibbsSpec, RateFamily};

fn main() -> kawasaki_kpz::Result<()> {
    let families = [
        RateFamily::Ssep,
        RateFamily::SpeedChange { b: 0.3 },
        RateFamily::Metropolis { spec: GibbsSpec::nearest_neighbor(1.0, 0.7, 0.0) },
    ];
    for family in &families {
        let c = builtin_rate(family)?;
        let sol = gradient::solve_gradient_condition(&c, c.radius().max(1))?;
        println!("{} residual {:.3e} ({:?})", family.name(), sol.residual, Verdict::of(sol.residual));
        for (sites, coef) in sol.omega.terms() {
            if coef.abs() > 1e-12 {
                println!("  ω term {sites:?}: {coef:+.6}");
            }
        }
    }
    Ok(())
}
