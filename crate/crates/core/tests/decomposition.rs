mod common;

use common::*;
use fotd::benchmarks::{make_toy_problem, ToyCase};
use fotd::newton::{assemble_newton_data, solve_full_newton, NewtonData};
use fotd::otd::{
    approximate_direction, assemble_subproblem, compose, decompose, make_plan, solve_subproblem, BoundaryVars,
    DecompositionPlan,
};
use fotd::PrimalDual;
use proptest::prelude::*;
use rand::Rng;

fn random_newton_data(seed: u64, n: usize, nx: usize, nu: usize) -> NewtonData {
    let mut r = rng(seed);
    let lq = random_lq(&mut r, n, nx, nu);
    let mut grad = PrimalDual::zeros(n, nx, nu);
    for v in grad.z.as_mut_slice().iter_mut().chain(grad.lambda.as_mut_slice()) {
        *v = r.random_range(-1.0..1.0);
    }
    NewtonData::from_blocks(lq.hessians, lq.a, lq.b, grad).unwrap()
}

fn on_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn exact_boundary_data_reproduces_the_full_direction(
        seed in 0u64..10_000,
        m in prop::sample::select(vec![1usize, 2, 4, 5]),
        b in 1usize..6,
        mu in 0.0f64..50.0,
    ) {
        let nd = random_newton_data(seed, 20, 2, 1);
        let exact = solve_full_newton(&nd).unwrap();
        let plan = make_plan(20, m, b).unwrap();
        let parts = decompose(&exact, &plan);
        for i in 0..m {
            let d = BoundaryVars::from_full(&exact, &plan, i);
            let sub = assemble_subproblem(&nd, &plan, i, mu, &d).unwrap();
            let sol = sub.solve().unwrap();
            prop_assert!(max_abs_diff(&sol, &parts[i]) < 1e-9 * (1.0 + exact.norm_inf()));
        }
    }

    #[test]
    fn window_solve_matches_dense(seed in 0u64..10_000, n in 4usize..21) {
        let nd = random_newton_data(seed, n, 1, 2);
        let plan = DecompositionPlan::from_knots(vec![0, n / 2, n], 1).unwrap();
        for i in 0..2 {
            let mut d = BoundaryVars::zeros(1, 2);
            d.d2[0] = 0.3;
            d.d3[1] = -0.7;
            d.d4[0] = 1.1;
            let sub = assemble_subproblem(&nd, &plan, i, 40.0, &d).unwrap();
            let got = solve_subproblem(&sub, i, 40.0, None).unwrap();
            prop_assert!(rel_diff(&got, &dense_kkt_solve(&sub)) < 1e-10);
            prop_assert!(sub.kkt_residual(&got) <= 1e-9 * (1.0 + sub.rhs_norm()));
        }
    }
}

#[test]
fn single_window_is_the_full_newton_step() {
    let nd = random_newton_data(1, 15, 2, 2);
    let plan = make_plan(15, 1, 3).unwrap();
    assert_eq!(
        approximate_direction(&nd, &plan, 25.0, None).unwrap(),
        solve_full_newton(&nd).unwrap()
    );
}

#[test]
fn clipped_windows_give_the_full_newton_step() {
    let nd = random_newton_data(2, 12, 2, 1);
    let plan = make_plan(12, 3, 11).unwrap();
    for i in 0..3 {
        assert_eq!(plan.interval(i), (0, 12));
    }
    let approx = approximate_direction(&nd, &plan, 25.0, None).unwrap();
    assert!(rel_diff(&approx, &solve_full_newton(&nd).unwrap()) < 1e-12);
}

#[test]
fn initial_state_is_preserved() {
    let p = make_toy_problem(&ToyCase::Three.spec(100)).unwrap();
    let it = random_iterate(&p, &mut rng(4), 10.0);
    let nd = assemble_newton_data(&p, &it.z, &it.lambda).unwrap();
    let dir = approximate_direction(&nd, &make_plan(100, 5, 3).unwrap(), 25.0, None).unwrap();
    assert_eq!(dir.z.x(0), &[0.0]);
}

#[test]
fn schedule_does_not_change_the_direction() {
    let p = make_toy_problem(&ToyCase::Two.spec(200)).unwrap();
    let it = random_iterate(&p, &mut rng(8), 10.0);
    let nd = assemble_newton_data(&p, &it.z, &it.lambda).unwrap();
    let plan = make_plan(200, 10, 4).unwrap();
    let one = on_pool(1, || approximate_direction(&nd, &plan, 25.0, None).unwrap());
    for threads in [2, 10] {
        let other = on_pool(threads, || approximate_direction(&nd, &plan, 25.0, None).unwrap());
        assert_eq!(one, other);
    }
}

#[test]
fn compatibility_decides_the_full_residual() {
    let nd = random_newton_data(6, 20, 2, 1);
    let lq = nd.to_lq();
    let exact = solve_full_newton(&nd).unwrap();
    let plan = make_plan(20, 4, 2).unwrap();

    let matched: Vec<PrimalDual> = (0..4)
        .map(|i| {
            let d = BoundaryVars::from_full(&exact, &plan, i);
            assemble_subproblem(&nd, &plan, i, 10.0, &d).unwrap().solve().unwrap()
        })
        .collect();
    assert!(lq.kkt_residual(&compose(&matched, &plan).unwrap()) <= 1e-7);

    let zero_boundary: Vec<PrimalDual> = (0..4)
        .map(|i| {
            let mut d = BoundaryVars::zeros(2, 1);
            d.d1.copy_from_slice(exact.z.x(plan.interval(i).0));
            assemble_subproblem(&nd, &plan, i, 10.0, &d).unwrap().solve().unwrap()
        })
        .collect();
    assert!(lq.kkt_residual(&compose(&zero_boundary, &plan).unwrap()) > 1e-3);
}

#[test]
fn last_window_keeps_the_terminal_block() {
    let nd = random_newton_data(10, 8, 2, 1);
    let plan = make_plan(8, 2, 2).unwrap();
    let sub = assemble_subproblem(&nd, &plan, 1, 99.0, &BoundaryVars::zeros(2, 1)).unwrap();
    assert_eq!(sub.hessians.last().unwrap(), &nd.modified[8]);
    let first = assemble_subproblem(&nd, &plan, 0, 99.0, &BoundaryVars::zeros(2, 1)).unwrap();
    let (_, m2) = plan.interval(0);
    let q = first.hessians.last().unwrap();
    assert!((q[(0, 0)] - nd.modified[m2][(0, 0)] - 99.0).abs() < 1e-12);
}
