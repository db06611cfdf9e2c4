//! Runs the overlapping Schwarz scheme next to the overlapping SQP method
//! on the same instance and prints both convergence histories.

use fotd::benchmarks::{make_toy_problem, ToyCase};
use fotd::schwarz::schwarz_solve;
use fotd::sqp::{solve, Mode, SolveReport, SolverConfig};

fn show(name: &str, r: &SolveReport) {
    println!("{name}: {:?}", r.status);
    for rec in &r.records {
        println!("  {:>2}  {:.6e}", rec.iter, rec.kkt_residual);
    }
}

fn main() {
    let p = make_toy_problem(&ToyCase::One.spec(500)).unwrap();
    let cfg = SolverConfig {
        subproblems: 10,
        overlap: 25,
        mu: 25.0,
        ..SolverConfig::default()
    };
    let s = schwarz_solve(&p, &cfg, p.zero_iterate());
    let f = solve(&p, &cfg, p.zero_iterate(), Mode::Fotd);
    show("schwarz", &s);
    show("fotd", &f);
    println!(
        "time: schwarz {:.1} ms, fotd {:.1} ms; max difference {:.3e}",
        s.total_ms(),
        f.total_ms(),
        s.solution.sub(&f.solution).norm_inf()
    );
}
