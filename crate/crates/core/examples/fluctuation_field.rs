//! Fluctuation field and Wick-corrected square on equilibrium samples.

use kawasaki_kpz::gibbs::{sample_gibbs, spec_at_density};
use kawasaki_kpz::kmc::{replica_rng, wick_bias, FieldSample, Mollifier, TestFunction};
use kawasaki_kpz::lattice::GibbsSpec;

fn main() -> kawasaki_kpz::Result<()> {
    let (rho, size) = (0.5, 2000);
    let eps = 1.0 / size as f64;
    let chi = rho * (1.0 - rho);
    let spec = spec_at_density(&GibbsSpec::product(0.0), rho)?;
    let m = Mollifier::triangular(0.05)?;
    let functions = [TestFunction::Sine { mode: 1 }, TestFunction::Bump { center: 0.5, width: 0.2 }];
    let mut rng = replica_rng(7, 0);
    for _ in 0..5 {
        let eta = sample_gibbs(&spec, size, &mut rng)?;
        let s = FieldSample::measure(&eta, rho, chi, eps, &functions, m, &[0, size / 2])?;
        println!("Y(sin) = {:+.3}, Y(bump) = {:+.3}, wick = {:+.3?}", s.tested[0], s.tested[1], s.wick);
    }
    println!("lattice bias of the Wick square: {:.2e}", wick_bias(chi, eps, &m));
    Ok(())
}
