mod common;

use common::*;
use flownet::controllers::{estimate_lipschitz, Controller};
use flownet::network::{
    build_weighted_norm, check_out_connected, validate_routing, Multigraph, RoutingSpec,
};
use flownet::reflection::{
    apply_phi, apply_pi, fixed_point_psi, traj_distance, traj_norm, TimeGrid, Trajectory,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

/// Out-connectedness by brute force: mass injected anywhere must leak out,
/// so every row of `R^n` sums to less than one.
fn leaks_everywhere(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let mut p = DMatrix::identity(n, n);
    for _ in 0..n {
        p = &p * m;
    }
    (0..n).all(|i| p.row(i).sum() < 1.0 - 1e-13)
}

fn spectral_bound(m: &DMatrix<f64>) -> f64 {
    // Gelfand: ||R^k||^(1/k) over the max row sum norm, from above
    let n = m.nrows();
    let mut p = DMatrix::identity(n, n);
    for _ in 0..64 {
        p = &p * m;
    }
    let norm = (0..n).map(|i| p.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    norm.powf(1.0 / 64.0)
}

fn grid(steps: usize) -> TimeGrid {
    TimeGrid::new(0.0, 0.05, steps).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn out_connectedness_matches_matrix_powers(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let links = rng.gen_range(1..=8);
        let g = random_graph(&mut rng, links);
        let m = random_routing_matrix(&mut rng, &g);
        let spec = RoutingSpec::new(g, m.clone(), 1e-12).unwrap();
        prop_assert!(validate_routing(&spec).messages().iter().all(|s| !s.contains("negative")));
        prop_assert_eq!(check_out_connected(&spec), leaks_everywhere(&m));
        prop_assert_eq!(build_weighted_norm(&spec).is_ok(), leaks_everywhere(&m));
    }

    #[test]
    fn weighted_norm_certifies_transpose_contraction(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let links = rng.gen_range(1..=8);
        let spec = random_routing(&mut rng, links);
        let wn = build_weighted_norm(&spec).unwrap();
        let rho = wn.contraction();
        prop_assert!(rho < 1.0);
        prop_assert!(spectral_bound(spec.matrix()) <= rho + 1e-9);
        let n = spec.num_links();
        let mut out = vec![0.0; n];
        for _ in 0..20 {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            spec.apply_transpose(&v, &mut out);
            prop_assert!(wn.norm(&out) <= rho * wn.norm(&v) + 1e-15);
        }
    }

    #[test]
    fn pi_is_a_contraction(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let links = rng.gen_range(1..=6);
        let spec = random_routing(&mut rng, links);
        let wn = build_weighted_norm(&spec).unwrap();
        let n = spec.num_links();
        let gr = grid(40);
        let gamma = random_path(&mut rng, gr, n, -1.0, 1.0);
        let v = random_path(&mut rng, gr, n, 0.0, 2.0);
        let v2 = random_path(&mut rng, gr, n, 0.0, 2.0);
        let a = apply_pi(&gamma, &v, &spec).unwrap();
        let b = apply_pi(&gamma, &v2, &spec).unwrap();
        let d = traj_distance(&v, &v2, &wn);
        prop_assert!(traj_distance(&a, &b, &wn) <= wn.contraction() * d + 1e-12);
        // running suprema never decrease
        for i in 0..n {
            let c = a.component(i);
            prop_assert!(c.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn psi_is_the_minimal_nonnegative_regulator(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let links = rng.gen_range(1..=6);
        let spec = random_routing(&mut rng, links);
        let wn = build_weighted_norm(&spec).unwrap();
        let n = spec.num_links();
        let gr = grid(40);
        let gamma = random_path(&mut rng, gr, n, -1.0, 1.0);
        let tol = 1e-11;
        let reg = fixed_point_psi(&gamma, &spec, &wn, tol).unwrap();
        let again = apply_pi(&gamma, &reg.w, &spec).unwrap();
        prop_assert!(traj_distance(&again, &reg.w, &wn) <= 2.0 * tol);
        prop_assert!(reg.w.data().iter().all(|&w| w >= 0.0));
        let out = apply_phi(&gamma, &spec, &wn, tol).unwrap();
        prop_assert!(out.x.data().iter().all(|&x| x >= -1e-9));
        // the regulator only pushes links that sit on the boundary
        for k in 0..gr.steps() {
            for i in 0..n {
                if reg.w.row(k + 1)[i] - reg.w.row(k)[i] > 1e-9 {
                    prop_assert!(out.x.row(k + 1)[i].abs() <= 1e-8);
                }
            }
        }
    }

    #[test]
    fn psi_lipschitz_bound(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let links = rng.gen_range(1..=6);
        let spec = random_routing(&mut rng, links);
        let wn = build_weighted_norm(&spec).unwrap();
        let n = spec.num_links();
        let gr = grid(40);
        let g1 = random_path(&mut rng, gr, n, -1.0, 1.0);
        let g2 = random_path(&mut rng, gr, n, -1.0, 1.0);
        let tol = 1e-12;
        let w1 = fixed_point_psi(&g1, &spec, &wn, tol).unwrap().w;
        let w2 = fixed_point_psi(&g2, &spec, &wn, tol).unwrap().w;
        let bound = traj_distance(&g1, &g2, &wn) / (1.0 - wn.contraction());
        prop_assert!(traj_distance(&w1, &w2, &wn) <= bound + 1e-9);
    }

    #[test]
    fn nonnegative_paths_pass_through_phi(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let links = rng.gen_range(1..=6);
        let spec = random_routing(&mut rng, links);
        let wn = build_weighted_norm(&spec).unwrap();
        let y = random_path(&mut rng, grid(30), spec.num_links(), 0.0, 3.0);
        let out = apply_phi(&y, &spec, &wn, 1e-12).unwrap();
        prop_assert_eq!(traj_norm(&out.regulator.w, &wn), 0.0);
        prop_assert_eq!(out.x, y);
    }

    #[test]
    fn controllers_respect_their_declared_bounds(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let links = rng.gen_range(1..=8);
        let spec = random_routing(&mut rng, links);
        let wn = build_weighted_norm(&spec).unwrap();
        let ctrl = random_controller(&mut rng, &spec);
        let declared = ctrl.lipschitz(&wn);
        let est = estimate_lipschitz(&ctrl, &wn, 0.0, 2.0, 300, seed);
        prop_assert!(est <= declared * (1.0 + 1e-9) + 1e-12, "estimate {} above bound {}", est, declared);
        let n = spec.num_links();
        for _ in 0..20 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..3.0)).collect();
            let z = ctrl.evaluate(&x);
            prop_assert!(z.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}

#[test]
fn gpa_shares_never_exceed_one() {
    let ctrl = Controller::gpa(vec![vec![0, 1], vec![2], vec![3]], 0.1).unwrap();
    let mut rng = StdRng::seed_from_u64(7);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..5.0)).collect();
        let z = ctrl.evaluate(&x);
        // one value per phase; links of a phase share it
        assert_eq!(z[0], z[1]);
        assert!(z[0] + z[2] + z[3] < 1.0);
    }
}

#[test]
fn certification_fails_for_closed_cycle() {
    let g = Multigraph::new(&["a", "b"], &[("p", "a", "b"), ("q", "b", "a")]).unwrap();
    let spec = RoutingSpec::from_fractions(g, &[("p", "q", 1.0), ("q", "p", 1.0)], 1e-12).unwrap();
    assert!(!check_out_connected(&spec));
    assert!(build_weighted_norm(&spec).is_err());
    assert!(!validate_routing(&spec).is_valid());
}

#[test]
fn pi_with_constant_inputs_is_constant() {
    let g = Multigraph::new(&["a", "b", "c"], &[("p", "a", "b"), ("q", "b", "c")]).unwrap();
    let spec = RoutingSpec::from_fractions(g, &[("p", "q", 0.5)], 1e-12).unwrap();
    let gr = grid(10);
    let gamma = Trajectory::constant(gr, &[-0.2, -0.1]);
    let v = Trajectory::constant(gr, &[1.0, 1.0]);
    let out = apply_pi(&gamma, &v, &spec).unwrap();
    assert!(out.rows().all(|r| r == [0.2, 0.6]));
}
