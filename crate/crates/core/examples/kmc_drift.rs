//! Weakly asymmetric speed-change dynamics: measured current against the
//! exact equilibrium value.

use kawasaki_kpz::kmc::{self, SimulationPlan};
use kawasaki_kpz::lattice::{builtin_rate, GibbsSpec, RateFamily};
use kawasaki_kpz::thermo;

fn main() -> kawasaki_kpz::Result<()> {
    let (rho, gamma) = (0.4, 0.05);
    let c = builtin_rate(&RateFamily::SpeedChange { b: 0.3 })?;
    let target = gamma * thermo::static_average(&c.reverse_current_observable(), &GibbsSpec::product(0.0), rho)?.value;
    let plan = SimulationPlan::new(c, GibbsSpec::product(0.0), 256, 2000.0)?
        .at_density(rho)?
        .with_gamma(gamma)?
        .with_seed(1)
        .with_replicas(16);
    let records = kmc::simulate_replicas(&plan)?;
    let (j, se) = kmc::mean_current(&records);
    println!("current {j:.5} ± {se:.5}, expected {target:.5}");
    Ok(())
}
