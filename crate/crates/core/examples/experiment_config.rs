//! Builds an experiment description in code, prints it as a config file for
//! `fotd sweep --config`, and runs a small sweep into a temporary directory.

use fotd::benchmarks::ToyCase;
use fotd::cli::{cmd_sweep, ExperimentConfig, ProblemConfig, SolveMode};

fn main() {
    let mut cfg = ExperimentConfig::new(ProblemConfig::toy_case(ToyCase::Two, 500));
    cfg.modes = vec![SolveMode::Fotd, SolveMode::Centralized];
    cfg.solver.subproblems = 20;
    cfg.run.inits = 3;
    cfg.run.diagnostics = true;
    println!("{}", cfg.to_toml().unwrap());

    let dir = tempfile::tempdir().unwrap();
    cfg.run.out = Some(dir.path().to_path_buf());
    let cells = cmd_sweep(&cfg, &[1, 5], &[25.0]).unwrap();
    for c in &cells {
        println!("b = {:>2}, mu = {}: all converged = {}", c.overlap, c.mu, c.result.all_converged());
    }
    print!("{}", std::fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap());
}
