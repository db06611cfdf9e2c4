//! Error of the overlapping approximation to the Newton direction as the
//! overlap grows, at a random iterate of a toy problem.

use fotd::benchmarks::{make_toy_problem, ToyCase};
use fotd::cli::{ls_slope, random_iterate};
use fotd::newton::{assemble_newton_data, modify_hessian};
use fotd::otd::make_plan;
use fotd::sqp::direction_error_ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let n = 200;
    let p = make_toy_problem(&ToyCase::Three.spec(n)).unwrap();
    let it = random_iterate(&p, &mut ChaCha8Rng::seed_from_u64(1), 10.0);
    let nd = modify_hessian(&assemble_newton_data(&p, &it.z, &it.lambda).unwrap(), None, 2.0).unwrap();

    let overlaps = [1usize, 2, 4, 8, 16];
    let mut logs = Vec::new();
    for &b in &overlaps {
        let r = direction_error_ratio(&nd, &make_plan(n, 10, b).unwrap(), 25.0, None).unwrap();
        println!("b = {b:>2}: {r:.3e}");
        logs.push(r.ln());
    }
    let x: Vec<f64> = overlaps.iter().map(|&b| b as f64).collect();
    let slope = ls_slope(&x, &logs);
    println!("log-ratio slope {slope:.4}, rho ~ {:.4}", slope.exp());
}
