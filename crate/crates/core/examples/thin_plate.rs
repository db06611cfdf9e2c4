//! Temperature control of a thin plate. The overlapping method starts from
//! a small overlap and lets the penalty adaptation grow it when the
//! approximate direction fails the descent test; the result is compared
//! with centralized SQP.

use fotd::benchmarks::{make_plate_problem, PlateSpec};
use fotd::sqp::{solve, Mode, SolverConfig};

fn main() {
    let spec = PlateSpec::new(4, 500);
    println!(
        "dt = {:.4}, dw = {:.4}, stability number {:.4}",
        spec.dt(),
        spec.dw(),
        spec.stability_number()
    );
    let p = make_plate_problem(&spec).expect("valid plate");
    for w in p.warnings() {
        println!("warning: {w}");
    }
    let cfg = SolverConfig {
        subproblems: 10,
        overlap: 5,
        mu: 25.0,
        adaptive: true,
        ..SolverConfig::default()
    };
    let fotd = solve(&p, &cfg, p.zero_iterate(), Mode::Fotd);
    let central = solve(&p, &cfg, p.zero_iterate(), Mode::Centralized);
    for (name, r) in [("fotd", &fotd), ("centralized", &central)] {
        println!(
            "{name:>12}: {:?}, {} iterations, |grad L| = {:.3e}, {:.1} ms",
            r.status,
            r.iterations(),
            r.final_kkt(),
            r.total_ms()
        );
    }
    println!(
        "adaptations {}, final overlap {}, final eta ({}, {})",
        fotd.adaptations, fotd.final_overlap, fotd.final_eta.eta1, fotd.final_eta.eta2
    );
    println!("max |fotd - centralized| = {:.3e}", fotd.solution.sub(&central.solution).norm_inf());
}
