//! Exact generators of the ring dynamics, for invariance checks on small rings.

use crate::error::{Error, Result};
use crate::lattice::{GibbsSpec, RateTable, RingConfiguration};

/// Largest ring handled by the exact generator checks.
pub const MAX_EXACT_RING: usize = 16;

fn check_size(c: &RateTable, spec: &GibbsSpec, size: usize) -> Result<()> {
    if size > MAX_EXACT_RING {
        return Err(Error::param(format!("exact generator limited to {MAX_EXACT_RING} sites")));
    }
    if size < c.window_len() || size < 2 * spec.range() + 2 {
        return Err(Error::param(format!("ring of {size} sites too small for the rate window")));
    }
    Ok(())
}

/// `-β H_ring(η) - φ N(η)` for every configuration of the ring.
fn log_weights(spec: &GibbsSpec, size: usize) -> Vec<f64> {
    (0..1u64 << size)
        .map(|bits| {
            let eta = RingConfiguration::from_bits(bits, size);
            -spec.beta() * spec.ring_energy(&eta) - spec.phi() * eta.particle_count() as f64
        })
        .collect()
}

/// Largest entry of `(π L)(η) / π(η)` where `L` is the generator of the
/// dynamics with rates `c_γ` and `π` the finite-ring Gibbs weights. Zero iff
/// `π` is invariant.
pub fn invariance_residual(c: &RateTable, spec: &GibbsSpec, size: usize) -> Result<f64> {
    check_size(c, spec, size)?;
    let logw = log_weights(spec, size);
    let mut worst = 0.0f64;
    for bits in 0..1u64 << size {
        let eta = RingConfiguration::from_bits(bits, size);
        let mut inflow = 0.0;
        let mut outflow = 0.0;
        for x in 0..size {
            let y = (x + 1) % size;
            if eta.occupancies()[x] == eta.occupancies()[y] {
                continue;
            }
            outflow += c.rate(c.index_at(&eta, x));
            let prev = eta.exchanged(x);
            let pb = bits ^ (1 << x) ^ (1 << y);
            inflow += (logw[pb as usize] - logw[bits as usize]).exp() * c.rate(c.index_at(&prev, x));
        }
        worst = worst.max((inflow - outflow).abs());
    }
    Ok(worst)
}

/// Largest `|c(η) - (π(η^{x,x+1})/π(η)) c(η^{x,x+1})|` over configurations
/// and bonds: zero iff the dynamics is reversible for `π`.
pub fn reversibility_residual(c: &RateTable, spec: &GibbsSpec, size: usize) -> Result<f64> {
    check_size(c, spec, size)?;
    let logw = log_weights(spec, size);
    let mut worst = 0.0f64;
    for bits in 0..1u64 << size {
        let eta = RingConfiguration::from_bits(bits, size);
        for x in 0..size {
            let y = (x + 1) % size;
            if eta.occupancies()[x] == eta.occupancies()[y] {
                continue;
            }
            let pb = bits ^ (1 << x) ^ (1 << y);
            let other = eta.exchanged(x);
            let ratio = (logw[pb as usize] - logw[bits as usize]).exp();
            let r = c.rate(c.index_at(&eta, x)) - ratio * c.rate(c.index_at(&other, x));
            worst = worst.max(r.abs());
        }
    }
    Ok(worst)
}

/// Jump probabilities of the embedded chain out of `eta`: entry `x` is
/// `c_γ` at bond `x` divided by the total.
pub fn jump_probabilities(c: &RateTable, eta: &RingConfiguration) -> Vec<f64> {
    let n = eta.len();
    let rates: Vec<f64> = (0..n)
        .map(|x| {
            if eta.occupancies()[x] == eta.occupancies()[(x + 1) % n] {
                0.0
            } else {
                c.rate(c.index_at(eta, x))
            }
        })
        .collect();
    let total: f64 = rates.iter().sum();
    rates.iter().map(|r| if total > 0.0 { r / total } else { 0.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{builtin_rate, RateFamily};

    #[test]
    fn ssep_reversible_and_invariant() {
        let ssep = builtin_rate(&RateFamily::Ssep).unwrap();
        let spec = GibbsSpec::product(0.4);
        assert!(reversibility_residual(&ssep, &spec, 6).unwrap() < 1e-14);
        let asym = ssep.with_gamma(0.5).unwrap();
        assert!(invariance_residual(&asym, &spec, 6).unwrap() < 1e-14);
        assert!(reversibility_residual(&asym, &spec, 6).unwrap() > 0.1);
    }

    #[test]
    fn size_limits() {
        let ssep = builtin_rate(&RateFamily::Ssep).unwrap();
        assert!(invariance_residual(&ssep, &GibbsSpec::product(0.0), 17).is_err());
        let sc = builtin_rate(&RateFamily::SpeedChange { b: 0.2 }).unwrap();
        assert!(invariance_residual(&sc, &GibbsSpec::product(0.0), 3).is_err());
    }

    #[test]
    fn jump_probabilities_normalized() {
        let sc = builtin_rate(&RateFamily::SpeedChange { b: 0.3 }).unwrap().with_gamma(0.2).unwrap();
        let eta = RingConfiguration::new(vec![1, 1, 0, 1, 0, 0]).unwrap();
        let p = jump_probabilities(&sc, &eta);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(p[0], 0.0);
    }
}
