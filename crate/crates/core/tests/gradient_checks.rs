use kawasaki_kpz::gradient::{
    self, check_detailed_balance, gradient_residual, FeasibilityCertificate, GradientRateProblem, InfeasibilityWitness,
};
use kawasaki_kpz::kmc::reversibility_residual;
use kawasaki_kpz::lattice::{builtin_rate, speed_change_omega, GibbsSpec, LocalFunction, RateFamily, RateTable};

fn gap(a: &LocalFunction, b: &LocalFunction) -> f64 {
    a.coefficients().iter().zip(b.coefficients()).skip(1).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn ssep_potential_is_occupation() {
    let c = builtin_rate(&RateFamily::Ssep).unwrap();
    let s = gradient::solve_gradient_condition(&c, 2).unwrap();
    assert!(s.residual < 1e-12);
    assert!(gap(&s.omega, &LocalFunction::occupation(0).with_window(-2, 2).unwrap()) < 1e-12);
}

#[test]
fn speed_change_potential_recovered_for_several_b() {
    assert!(builtin_rate(&RateFamily::SpeedChange { b: 0.9 }).is_err());
    for b in [-0.45, -0.1, 0.2, 0.3, 0.49] {
        let c = builtin_rate(&RateFamily::SpeedChange { b }).unwrap();
        let s = gradient::solve_gradient_condition(&c, 1).unwrap();
        assert!(s.residual < 1e-12, "b = {b}");
        let raw = &s.omega * (1.0 / c.normalization());
        assert!(gap(&raw, &speed_change_omega(b).with_window(-1, 1).unwrap()) < 1e-12, "b = {b}");
    }
}

#[test]
fn metropolis_is_not_gradient_but_is_reversible() {
    let spec = GibbsSpec::nearest_neighbor(1.0, 0.7, 0.0);
    let c = builtin_rate(&RateFamily::Metropolis { spec: spec.clone() }).unwrap();
    assert!(check_detailed_balance(&c, &spec) < 1e-12);
    for k in 1..=4 {
        assert!(gradient::solve_gradient_condition(&c, k).unwrap().residual > 1e-3, "K = {k}");
    }
    assert!(reversibility_residual(&c, &spec, 10).unwrap() < 1e-12);
}

#[test]
fn svd_and_normal_equations_agree() {
    let c = builtin_rate(&RateFamily::SpeedChange { b: 0.4 }).unwrap();
    let a = gradient::solve_gradient_condition(&c, 3).unwrap();
    let b = gradient::solve_gradient_normal_equations(&c, 3).unwrap();
    assert!((a.residual - b.residual).abs() < 1e-9);
    assert!(gradient_residual(&c, &b.omega) < 1e-9);
}

#[test]
fn asymmetry_does_not_change_the_symmetric_part() {
    let c = builtin_rate(&RateFamily::SpeedChange { b: 0.3 }).unwrap();
    let s = gradient::solve_gradient_condition(&c, 1).unwrap();
    for gamma in [0.1, 0.5, 1.0] {
        let t = gradient::solve_gradient_condition(&c.with_gamma(gamma).unwrap(), 1).unwrap();
        assert!(t.residual < 1e-12);
        assert!(gap(&s.omega, &t.omega) < 1e-12);
    }
}

#[test]
fn designer_at_radius_zero_finds_ssep() {
    let cert = gradient::design_gradient_rate(&GibbsSpec::product(0.0), 0, 0).unwrap();
    let FeasibilityCertificate::Feasible { rates, max_violation, .. } = &cert else {
        panic!("expected a feasible design, got {cert:?}");
    };
    assert!(*max_violation < 1e-9);
    // only the two exchanging windows carry a rate
    assert!((rates[0b01] - 1.0).abs() < 1e-9 && (rates[0b10] - 1.0).abs() < 1e-9);
}

#[test]
fn designer_accepts_speed_change_rates() {
    let spec = GibbsSpec::product(0.0);
    let problem = GradientRateProblem::new(&spec, 1, 1).unwrap();
    let c = builtin_rate(&RateFamily::SpeedChange { b: 0.3 }).unwrap();
    let omega = gradient::solve_gradient_condition(&c, 1).unwrap().omega;
    let rates: Vec<f64> = (0..1usize << c.window_len()).map(|i| c.symmetric_rate(i)).collect();
    assert!(problem.constraint_violation(&rates, &omega).unwrap() < 1e-12);

    let cert = problem.solve().unwrap();
    let table: RateTable = cert.rate_table().expect("feasible").unwrap();
    let s = gradient::solve_gradient_condition(&table, 1).unwrap();
    assert!(s.residual < 1e-9);
    assert!(check_detailed_balance(&table, &spec) < 1e-9);
}

#[test]
fn designer_reports_witnesses() {
    let spec = GibbsSpec::nearest_neighbor(1.0, 0.7, 0.0);
    let empty = GradientRateProblem::new(&spec, 1, 1).unwrap().with_bounds(0.8, 0.2).solve().unwrap();
    assert!(matches!(empty, FeasibilityCertificate::Infeasible { witness: InfeasibilityWitness::Bound { .. } }));

    let tight = GradientRateProblem::new(&spec, 1, 1).unwrap().with_bounds(0.9, 1.0).solve().unwrap();
    match tight {
        FeasibilityCertificate::Infeasible { witness: InfeasibilityWitness::Constraints { total_slack, violated } } => {
            assert!(total_slack > 1e-9);
            assert!(!violated.is_empty());
        }
        other => panic!("expected a constraint witness, got {other:?}"),
    }
}

#[test]
fn designer_limits_and_ranges() {
    let spec = GibbsSpec::nearest_neighbor(1.0, 0.5, 0.0);
    assert!(GradientRateProblem::new(&spec, 0, 0).is_err());
    assert!(GradientRateProblem::new(&GibbsSpec::product(0.0), 3, 3).is_err());
    assert!(GradientRateProblem::new(&GibbsSpec::product(0.0), 2, 1).is_err());
}
