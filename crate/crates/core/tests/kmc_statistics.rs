use std::collections::HashMap;

use rand::Rng;

use kawasaki_kpz::gibbs::{sample_gibbs, spec_at_density};
use kawasaki_kpz::kmc::{
    self, fluctuation_field, jump_probabilities, read_snapshots, replica_rng, wick_bias, wick_quadratic, write_snapshots,
    Engine, Mollifier, Outcome, SimulationPlan, StructureSpec, TestFunction,
};
use kawasaki_kpz::lattice::{builtin_rate, GibbsSpec, RateFamily, RingConfiguration};

#[test]
fn embedded_jump_chain_matches_rates() {
    let c = builtin_rate(&RateFamily::SpeedChange { b: 0.3 }).unwrap().with_gamma(0.4).unwrap();
    let size = 6;
    let start = RingConfiguration::new(vec![1, 1, 0, 1, 0, 0]).unwrap();
    let mut engine = Engine::new(&c, start, replica_rng(5, 0)).unwrap();
    let mut counts: HashMap<u64, Vec<u64>> = HashMap::new();
    for _ in 0..400_000 {
        let (state, p) = engine.next_jump();
        counts.entry(state).or_insert_with(|| vec![0; size])[p.bond] += 1;
    }
    let mut checked = 0;
    for (state, hits) in &counts {
        let total: u64 = hits.iter().sum();
        if total < 5000 {
            continue;
        }
        let probs = jump_probabilities(&c, &RingConfiguration::from_bits(*state, size));
        for (h, p) in hits.iter().zip(&probs) {
            let freq = *h as f64 / total as f64;
            let se = (p * (1.0 - p) / total as f64).sqrt().max(1e-12);
            assert!((freq - p).abs() <= 5.0 * se, "state {state:b}: {freq} vs {p}");
        }
        checked += 1;
    }
    assert!(checked >= 10);
}

#[test]
fn asymmetric_dynamics_keeps_canonical_uniform_law() {
    // product invariant measures restricted to N particles are uniform
    let c = builtin_rate(&RateFamily::SpeedChange { b: -0.3 }).unwrap().with_gamma(0.5).unwrap();
    let mut engine = Engine::new(&c, RingConfiguration::alternating(8), replica_rng(8, 0)).unwrap();
    let mut visits: HashMap<Vec<u8>, u64> = HashMap::new();
    let dt = 0.05;
    let samples = 2_000_000u64;
    for k in 1..=samples {
        engine.advance_to(k as f64 * dt);
        *visits.entry(engine.occupancies().to_vec()).or_default() += 1;
    }
    assert_eq!(visits.len(), 70);
    for (eta, v) in &visits {
        let rel = *v as f64 / samples as f64 * 70.0 - 1.0;
        assert!(rel.abs() < 0.15, "{eta:?}: {rel}");
    }
}

#[test]
fn mean_occupation_and_drift_sign() {
    let c = builtin_rate(&RateFamily::Ssep).unwrap();
    let plan = SimulationPlan::new(c, GibbsSpec::product(0.0), 64, 2000.0)
        .unwrap()
        .at_density(0.5)
        .unwrap()
        .with_gamma(0.5)
        .unwrap()
        .with_seed(3)
        .with_replicas(8);
    let records = kmc::simulate_replicas(&plan).unwrap();
    let (j, se) = kmc::mean_current(&records);
    // γ ρ(1-ρ) for exclusion, with the finite-ring correction ignored
    assert!((j - 0.5 * 0.25).abs() < 5.0 * se + 0.01, "{j} ± {se}");
    for r in &records {
        assert_eq!(r.continuity_defect(), 0);
        assert_eq!(r.final_configuration.particle_count(), r.particles);
    }
}

#[test]
fn fluctuation_field_variance_at_equilibrium() {
    let rho = 0.3;
    let chi = rho * (1.0 - rho);
    let size = 200;
    let eps = 1.0 / size as f64;
    let spec = spec_at_density(&GibbsSpec::product(0.0), rho).unwrap();
    let mut rng = replica_rng(21, 0);
    let f = TestFunction::Sine { mode: 1 };
    let n = 20_000;
    let ys: Vec<f64> = (0..n)
        .map(|_| fluctuation_field(&sample_gibbs(&spec, size, &mut rng).unwrap(), rho, eps, &f).unwrap())
        .collect();
    let mean = ys.iter().sum::<f64>() / n as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let expected = chi * 0.5;
    assert!(mean.abs() < 5.0 * (expected / n as f64).sqrt());
    assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
}

#[test]
fn wick_square_is_centred() {
    let rho = 0.5;
    let chi = 0.25;
    let eps = 1e-3;
    let m = Mollifier::triangular(0.1).unwrap();
    let size = 1000;
    let spec = spec_at_density(&GibbsSpec::product(0.0), rho).unwrap();
    let mut rng = replica_rng(22, 0);
    let n = 4000;
    let mut vals = Vec::with_capacity(n);
    for _ in 0..n {
        let eta = sample_gibbs(&spec, size, &mut rng).unwrap();
        vals.push(wick_quadratic(&eta, rho, chi, eps, &m, rng.random_range(0..size)).unwrap());
    }
    let mean = vals.iter().sum::<f64>() / n as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let bias = wick_bias(chi, eps, &m);
    assert!(bias.abs() < 1e-4);
    assert!((mean - bias).abs() < 4.0 * sd / (n as f64).sqrt(), "{mean} vs {bias}");
}

#[test]
fn structure_function_starts_at_chi_delta_and_conserves_mass() {
    let c = builtin_rate(&RateFamily::SpeedChange { b: 0.3 }).unwrap();
    let plan = SimulationPlan::new(c, GibbsSpec::product(0.0), 128, 100.0)
        .unwrap()
        .at_density(0.4)
        .unwrap()
        .with_seed(31)
        .with_replicas(8);
    let design = StructureSpec {
        max_lag: 40,
        time_lags: vec![0.0, 5.0, 10.0, 20.0],
        origin_spacing: 5.0,
        origins: 10,
        velocity: 0.0,
    };
    let s = kmc::structure_function(&plan, &design).unwrap();
    let zero = s.lags.iter().position(|&x| x == 0).unwrap();
    let chi = 0.24;
    for (j, &x) in s.lags.iter().enumerate() {
        let v = s.values[0][j];
        let target = if x == 0 { chi } else { 0.0 };
        assert!((v - target).abs() < 5.0 * s.stderr[0][j] + 0.01, "lag {x}: {v}");
    }
    assert!(s.values[0][zero] > 0.2);
    // the ring sum is a function of N alone, so it cannot change with time
    for t in 1..s.times.len() {
        assert!((s.ring_sum[t].0 - s.ring_sum[0].0).abs() < 1e-12);
    }
}

#[test]
fn frame_shift_and_snapshots() {
    let c = builtin_rate(&RateFamily::Ssep).unwrap();
    let plan = SimulationPlan::new(c, GibbsSpec::product(0.0), 40, 10.0)
        .unwrap()
        .at_density(0.5)
        .unwrap()
        .with_gamma(0.2)
        .unwrap()
        .with_sample_times(vec![2.5, 5.0, 7.5, 10.0])
        .unwrap()
        .with_snapshots(true)
        .with_seed(9);
    let rec = kmc::simulate(&plan, 0).unwrap();
    assert_eq!(rec.snapshots.len(), 4);
    let v = 0.7;
    let shifted = kmc::frame_shift(&rec, v);
    for ((eta, s), &t) in rec.snapshots.iter().zip(&shifted).zip(&rec.sample_times) {
        let d = kmc::lattice_drift(v, t);
        for x in 0..40i64 {
            assert_eq!(s.get(x), eta.get(x + d));
        }
    }
    let samples: Vec<(f64, RingConfiguration)> = rec.sample_times.iter().copied().zip(rec.snapshots.iter().cloned()).collect();
    let mut buf = Vec::new();
    write_snapshots(&mut buf, 40, &samples).unwrap();
    let (size, back) = read_snapshots(buf.as_slice()).unwrap();
    assert_eq!(size, 40);
    assert_eq!(back, samples);
    assert!(read_snapshots(&buf[..buf.len() - 3]).is_err());
}

#[test]
fn engine_counts_are_consistent() {
    let c = builtin_rate(&RateFamily::Ssep).unwrap().with_gamma(1.0).unwrap();
    let mut e = Engine::new(&c, RingConfiguration::alternating(10), replica_rng(1, 1)).unwrap();
    e.advance_to(50.0);
    let n = e.counts();
    assert!(n.proposals >= n.accepted());
    assert_eq!(n.right + n.left, n.accepted());
    // γ = 1 forbids every leftward jump
    assert_eq!(n.left, 0);
    assert_eq!(e.currents().iter().sum::<i64>(), n.right as i64);
    let mut e2 = Engine::new(&c, RingConfiguration::alternating(10), replica_rng(1, 1)).unwrap();
    for _ in 0..5 {
        assert_ne!(e2.propose().outcome, Outcome::Left);
    }
}
