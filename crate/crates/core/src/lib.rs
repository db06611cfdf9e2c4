//! Overlapping temporal decomposition for long-horizon nonlinear dynamic
//! programs.
//!
//! The crate solves equality-constrained optimal control problems
//!
//! ```text
//!   min  sum_{k<N} g_k(x_k, u_k) + g_N(x_N)
//!   s.t. x_{k+1} = f_k(x_k, u_k),  x_0 = x0_bar
//! ```
//!
//! with an SQP method whose Newton direction is approximated by solving
//! overlapping linear-quadratic subproblems on short time windows in
//! parallel ([`sqp::Mode::Fotd`]). A centralized full-Newton SQP and the
//! overlapping Schwarz scheme ([`schwarz`]) are provided as baselines.
//!
//! ```no_run
//! use fotd::benchmarks::{make_initializations, make_toy_problem, ToyCase};
//! use fotd::sqp::{solve, Mode, SolverConfig};
//!
//! let p = make_toy_problem(&ToyCase::One.spec(500)).unwrap();
//! let init = make_initializations(&p, 1, 0).remove(0);
//! let report = solve(&p, &SolverConfig::default(), init, Mode::Fotd);
//! println!("{:?} after {} iterations", report.status, report.iterations());
//! ```

pub mod benchmarks;
pub mod cli;
pub mod error;
pub mod io;
pub mod linalg;
pub mod newton;
pub mod nldp;
pub mod otd;
pub mod schwarz;
pub mod sqp;

pub use error::{Error, Result};
pub use nldp::{DualTrajectory, PenaltyParams, PrimalDual, ProblemDef, StageModel, Trajectory};
