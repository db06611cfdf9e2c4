//! Solves one of the scalar toy benchmarks with the overlapping SQP method
//! from every standard initialization.
//!
//! ```text
//! cargo run --release --example toy_case -- 2 1000
//! ```

use fotd::benchmarks::{make_initializations, make_toy_problem, ToyCase};
use fotd::sqp::{solve, Mode, SolverConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let case = args
        .next()
        .and_then(|s| s.parse().ok())
        .and_then(ToyCase::from_index)
        .unwrap_or(ToyCase::One);
    let horizon: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);

    let p = make_toy_problem(&case.spec(horizon)).expect("valid toy case");
    let cfg = SolverConfig {
        subproblems: 10,
        overlap: 5,
        mu: 25.0,
        ..SolverConfig::default()
    };
    println!("case {} with N = {horizon}, M = {}, b = {}", case.index(), cfg.subproblems, cfg.overlap);
    for (i, init) in make_initializations(&p, 5, 0).into_iter().enumerate() {
        let r = solve(&p, &cfg, init, Mode::Fotd);
        println!(
            "init {i}: {:?} after {:>2} iterations, |grad L| = {:.3e}, {:.1} ms",
            r.status,
            r.iterations(),
            r.final_kkt(),
            r.total_ms()
        );
    }
}
