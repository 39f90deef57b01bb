//! Searches for reversible gradient rates with a linear program.

use kawasaki_kpz::gradient::{design_gradient_rate, FeasibilityCertificate, GradientRateProblem};
use kawasaki_kpz::lattice::GibbsSpec;

fn main() -> kawasaki_kpz::Result<()> {
    for r in 0..=2 {
        let cert = design_gradient_rate(&GibbsSpec::product(0.0), r, r)?;
        if let FeasibilityCertificate::Feasible { rates, max_violation, .. } = &cert {
            let active = rates.iter().filter(|&&c| c > 0.0).count();
            println!("product measure, r = {r}: feasible, {active} nonzero rates, max violation {max_violation:.1e}");
        }
    }
    let ising = GibbsSpec::nearest_neighbor(1.0, 0.7, 0.0);
    let cert = GradientRateProblem::new(&ising, 1, 1)?.with_bounds(0.9, 1.0).solve()?;
    println!("{}", serde_json::to_string_pretty(&cert).unwrap_or_default());
    Ok(())
}
