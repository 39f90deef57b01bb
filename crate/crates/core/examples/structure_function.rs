//! Space-time correlations of SSEP and the growth of their second moment.

use kawasaki_kpz::kmc::{self, SimulationPlan, StructureSpec};
use kawasaki_kpz::lattice::{builtin_rate, GibbsSpec, RateFamily};

fn main() -> kawasaki_kpz::Result<()> {
    let plan = SimulationPlan::new(builtin_rate(&RateFamily::Ssep)?, GibbsSpec::product(0.0), 512, 200.0)?
        .at_density(0.5)?
        .with_seed(4)
        .with_replicas(16);
    let design = StructureSpec {
        max_lag: 64,
        time_lags: (0..=8).map(|k| 25.0 * k as f64).collect(),
        origin_spacing: 5.0,
        origins: 100,
        velocity: 0.0,
    };
    let s = kmc::structure_function(&plan, &design)?;
    for (t, (m, se)) in s.times.iter().zip(&s.second_moment) {
        println!("t = {t:>5}: Σx²S/χ = {m:8.2} ± {se:.2}");
    }
    let fit = s.diffusive_slope(25.0, 200.0)?;
    println!("slope {:.3} ± {:.3} (2D = 2)", fit.slope, fit.stderr);
    Ok(())
}
