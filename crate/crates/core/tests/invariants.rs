use proptest::prelude::*;

use kawasaki_kpz::gibbs::{canonical_expectation, CanonicalSpec};
use kawasaki_kpz::gradient::check_detailed_balance;
use kawasaki_kpz::kmc::{self, fluctuation_field, replica_rng, Engine, Mollifier, TestFunction};
use kawasaki_kpz::lattice::{builtin_rate, Coupling, GibbsSpec, LocalFunction, RateFamily, RingConfiguration};
use kawasaki_kpz::sbe::{self, FieldState, SbeCoefficients};

fn ring(max: usize) -> impl Strategy<Value = RingConfiguration> {
    prop::collection::vec(0u8..=1, 4..=max).prop_map(|v| RingConfiguration::new(v).unwrap())
}

fn pair_spec() -> impl Strategy<Value = GibbsSpec> {
    (-1.5f64..1.5, -1.0f64..1.0, 0.1f64..1.5, -1.0f64..1.0).prop_map(|(j1, j2, beta, phi)| {
        GibbsSpec::new(
            vec![Coupling::new(&[0, 1], j1).unwrap(), Coupling::new(&[0, 2], j2).unwrap()],
            beta,
            phi,
        )
        .unwrap()
    })
}

proptest! {
    #[test]
    fn exchange_delta_matches_ring_energy(spec in pair_spec(), eta in ring(14), x in 0usize..14) {
        let x = x % eta.len();
        let d = spec.hamiltonian_exchange_delta(&eta, x).unwrap();
        let direct = spec.ring_energy(&eta.exchanged(x)) - spec.ring_energy(&eta);
        prop_assert!((d - direct).abs() < 1e-10);
    }

    #[test]
    fn metropolis_rates_satisfy_detailed_balance(j in -2.0f64..2.0, beta in 0.0f64..2.0) {
        let spec = GibbsSpec::nearest_neighbor(j, beta, 0.0);
        let c = builtin_rate(&RateFamily::Metropolis { spec: spec.clone() }).unwrap();
        prop_assert!(check_detailed_balance(&c, &spec) < 1e-12);
    }

    #[test]
    fn dynamics_conserves_particles_and_obeys_continuity(
        eta in ring(24), b in -0.45f64..0.45, gamma in 0.0f64..1.0, t in 0.0f64..20.0, seed in any::<u64>()
    ) {
        let c = builtin_rate(&RateFamily::SpeedChange { b }).unwrap().with_gamma(gamma).unwrap();
        let n = eta.particle_count();
        let mut e = Engine::new(&c, eta.clone(), replica_rng(seed, 0)).unwrap();
        e.advance_to(t);
        prop_assert_eq!(e.particle_count(), n);
        let l = eta.len();
        for x in 0..l {
            let change = e.occupancies()[x] as i64 - eta.occupancies()[x] as i64;
            let j = e.currents();
            prop_assert_eq!(change, j[(x + l - 1) % l] - j[x]);
        }
    }

    #[test]
    fn rotation_commutes_with_local_functions(eta in ring(16), shift in -20i64..20) {
        let f = LocalFunction::from_terms(&[(vec![0, 1], 1.0), (vec![-1, 2], -0.5), (vec![0], 0.25)]);
        let r = eta.rotated(shift);
        for x in 0..eta.len() {
            let y = (x as i64 + shift).rem_euclid(eta.len() as i64) as usize;
            prop_assert!((f.evaluate(&r, x) - f.evaluate(&eta, y)).abs() < 1e-15);
        }
    }

    #[test]
    fn fluctuation_field_is_linear(eta in ring(40), a in -3.0f64..3.0, rho in 0.05f64..0.95) {
        let l = eta.len();
        let eps = 1.0 / l as f64;
        let u: Vec<f64> = (0..l).map(|i| (i as f64 * 0.3).cos()).collect();
        let v: Vec<f64> = (0..l).map(|i| ((i * i) % 5) as f64).collect();
        let w: Vec<f64> = u.iter().zip(&v).map(|(p, q)| a * p + q).collect();
        let y = |g: &Vec<f64>| fluctuation_field(&eta, rho, eps, &TestFunction::Sampled { values: g.clone() }).unwrap();
        prop_assert!((y(&w) - (a * y(&u) + y(&v))).abs() < 1e-10);
    }

    #[test]
    fn canonical_occupation_is_sigma(ell in 2usize..16, k in 0usize..16, x in -3i32..3) {
        let k = k % (ell + 1);
        let c = CanonicalSpec::new(ell, k).unwrap();
        let v = canonical_expectation(&LocalFunction::occupation(x), &GibbsSpec::product(0.0), c).unwrap();
        prop_assert!((v - c.sigma()).abs() < 1e-12);
    }

    #[test]
    fn sbe_step_conserves_mass(
        values in prop::collection::vec(-2.0f64..2.0, 20..48), lambda in -2.0f64..2.0, seed in any::<u64>()
    ) {
        let m = values.len();
        let dx = 1.0 / m as f64;
        let coeffs = SbeCoefficients { d: 0.7, chi: 0.3, lambda };
        let mut s = FieldState::new(values, dx, coeffs, Mollifier::triangular(2.5 * dx).unwrap()).unwrap();
        let mut rng = replica_rng(seed, 0);
        let m0 = s.mass();
        for _ in 0..20 {
            s = sbe::step(&s, 0.9 * s.max_dt(), &mut rng).unwrap();
        }
        prop_assert!((s.mass() - m0).abs() < 1e-12);
    }
}

#[test]
fn simulate_is_deterministic_per_replica() {
    let c = builtin_rate(&RateFamily::SpeedChange { b: 0.2 }).unwrap();
    let plan = kmc::SimulationPlan::new(c, GibbsSpec::product(0.0), 32, 30.0)
        .unwrap()
        .at_density(0.5)
        .unwrap()
        .with_gamma(0.3)
        .unwrap()
        .with_seed(12)
        .with_replicas(4);
    let all = kmc::simulate_replicas(&plan).unwrap();
    assert_eq!(all[2], kmc::simulate(&plan, 2).unwrap());
    assert_ne!(all[0].final_configuration, all[1].final_configuration);
}
