mod common;

use common::*;
use flownet::network::build_weighted_norm;
use flownet::oracle::{oracle_solve, sup_distance, OracleConfig};
use flownet::reflection::traj_distance;
use flownet::scenario::load_scenario;
use flownet::solver::{solve, solve_from_guess, SolverConfig};
use flownet::verify::{check_invariants, check_solution};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_solutions_satisfy_invariants(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let sc = random_scenario(&mut rng, 5.0, 0.01);
        let sol = solve(&sc, &SolverConfig::default()).unwrap();
        let rep = check_solution(&sc, &sol, 50.0 * 0.01).unwrap();
        prop_assert!(rep.passed(), "{:?}", rep.violations());
        prop_assert!(sol.report.max_residual <= SolverConfig::default().tol_picard);
    }

    #[test]
    fn window_length_does_not_change_the_discrete_solution(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let sc = random_scenario(&mut rng, 3.0, 0.01);
        let wide = solve(&sc, &SolverConfig::default()).unwrap();
        let narrow = solve(&sc, &SolverConfig { safety: 0.05, ..SolverConfig::default() }).unwrap();
        let d = sup_distance(&wide.x, &narrow.x).unwrap();
        prop_assert!(d <= 1e-6, "distance {}", d);
    }

    #[test]
    fn oracle_paths_satisfy_invariants(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let sc = random_scenario(&mut rng, 3.0, 0.01);
        let cfg = OracleConfig::refining(&sc, 10).unwrap();
        let o = oracle_solve(&sc, &cfg).unwrap();
        let rep = check_invariants(&sc, &o.x, &o.z, &o.zeta, &o.w, 50.0 * cfg.step).unwrap();
        prop_assert!(rep.passed(), "{:?}", rep.violations());
    }

    #[test]
    fn solver_tracks_oracle_on_random_networks(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let sc = random_scenario(&mut rng, 3.0, 0.01);
        let sol = solve(&sc, &SolverConfig::default()).unwrap();
        let o = oracle_solve(&sc, &OracleConfig::refining(&sc, 10).unwrap()).unwrap();
        let d = sup_distance(&sol.x, &o.sample_state(&sol.grid).unwrap()).unwrap();
        // first-order agreement; the slope of the worst random controller sets the constant
        let bound = 20.0 * (0.01 + 0.001) * (1.0 + sol.report.sizing.lipschitz_zeta);
        prop_assert!(d <= bound, "distance {} bound {}", d, bound);
    }
}

#[test]
fn uniqueness_probe_on_bundled_scenarios() {
    let cfg = SolverConfig::default();
    for name in BUNDLED {
        let sc = load_scenario(&bundled(name)).unwrap().with_horizon(20.0).unwrap();
        let wn = build_weighted_norm(&sc.routing).unwrap();
        let a = solve(&sc, &cfg).unwrap();
        let o = oracle_solve(&sc, &OracleConfig::refining(&sc, 10).unwrap()).unwrap();
        let guess = o.sample_state(&a.grid).unwrap();
        let b = solve_from_guess(&sc, &cfg, Some(&guess)).unwrap();
        let l = a.report.windows.iter().map(|w| w.contraction).fold(0.0, f64::max);
        let d = traj_distance(&a.x, &b.x, &wn);
        assert!(d <= 2.0 * cfg.tol_picard / (1.0 - l), "{name}: {d}");
    }
}

#[test]
fn bundled_scenarios_pass_verification() {
    for name in BUNDLED {
        let sc = load_scenario(&bundled(name)).unwrap();
        let sol = solve(&sc, &SolverConfig::default()).unwrap();
        let rep = check_solution(&sc, &sol, 50.0 * sc.step).unwrap();
        assert!(rep.passed(), "{name}: {:?}", rep.violations());
    }
}

#[test]
fn zero_state_without_inflow_stays_empty() {
    let mut rng = StdRng::seed_from_u64(11);
    let sc = random_scenario(&mut rng, 2.0, 0.01);
    let n = sc.num_links();
    let sc = flownet::solver::Scenario::new(
        sc.routing.clone(),
        sc.controller.clone(),
        flownet::solver::InflowSignal::constant(vec![0.0; n]).unwrap(),
        vec![0.0; n],
        2.0,
        0.01,
    )
    .unwrap();
    let sol = solve(&sc, &SolverConfig::default()).unwrap();
    assert!(sol.x.data().iter().all(|v| v.abs() <= 1e-12));
    assert!(sol.z.data().iter().all(|v| v.abs() <= 1e-9));
    let rep = check_solution(&sc, &sol, 1e-6).unwrap();
    assert!(rep.passed(), "{:?}", rep.violations());
}
