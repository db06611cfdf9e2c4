//! Evaluates the controllability-based lower bound on the eigenvalues of
//! `G G^T` and the penalty threshold `mu_bar` for a few parameter sets.

use fotd::newton::{theory_gamma_g, theory_mu_bar};

fn main() {
    println!("{:>8} {:>3} {:>8} {:>14} {:>14}", "gamma_C", "t", "Upsilon", "gamma_G", "mu_bar");
    for (gc, t, up) in [(1.0, 1, 2.0), (0.5, 2, 2.0), (1.0, 2, 2.0), (10.0, 1, 1.5)] {
        println!(
            "{gc:>8} {t:>3} {up:>8} {:>14.6e} {:>14.6e}",
            theory_gamma_g(gc, t, up).unwrap(),
            theory_mu_bar(gc, t, up).unwrap()
        );
    }
    if let Err(e) = theory_gamma_g(1.0, 1, 1.0) {
        println!("Upsilon = 1: {e}");
    }
}
