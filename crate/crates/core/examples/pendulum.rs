//! A user-defined nonlinear model: swinging a damped pendulum to rest with
//! a torque input. Writes the final trajectory as CSV to stdout.

use std::sync::Arc;

use fotd::io::trajectory_csv;
use fotd::sqp::{solve, Mode, SolverConfig};
use fotd::{ProblemDef, StageModel};
use nalgebra::{DMatrix, DVector};

struct Pendulum {
    dt: f64,
    damping: f64,
}

impl StageModel for Pendulum {
    fn stage_cost(&self, _k: usize, x: &[f64], u: &[f64]) -> f64 {
        0.5 * self.dt * (x[0] * x[0] + 0.1 * x[1] * x[1] + 0.01 * u[0] * u[0])
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        5.0 * (x[0] * x[0] + x[1] * x[1])
    }

    fn stage_cost_gradient(&self, _k: usize, x: &[f64], u: &[f64]) -> DVector<f64> {
        DVector::from_vec(vec![self.dt * x[0], 0.1 * self.dt * x[1], 0.01 * self.dt * u[0]])
    }

    fn terminal_cost_gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_vec(vec![10.0 * x[0], 10.0 * x[1]])
    }

    fn stage_cost_hessian(&self, _k: usize, _x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(vec![self.dt, 0.1 * self.dt, 0.01 * self.dt]))
    }

    fn terminal_cost_hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * 10.0
    }

    fn dynamics(&self, _k: usize, x: &[f64], u: &[f64]) -> DVector<f64> {
        DVector::from_vec(vec![
            x[0] + self.dt * x[1],
            x[1] + self.dt * (-x[0].sin() - self.damping * x[1] + u[0]),
        ])
    }

    fn dynamics_jacobians(&self, _k: usize, x: &[f64], _u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, self.dt, -self.dt * x[0].cos(), 1.0 - self.dt * self.damping]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, self.dt]);
        (a, b)
    }

    fn dynamics_hessian_contraction(&self, _k: usize, x: &[f64], _u: &[f64], lambda_next: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(3, 3);
        // second component: d2/dtheta2 of -dt*sin(theta) is dt*sin(theta)
        h[(0, 0)] = -lambda_next[1] * self.dt * x[0].sin();
        h
    }
}

fn main() {
    let n = 400;
    let model = Pendulum { dt: 0.025, damping: 0.1 };
    let p = ProblemDef::new(n, 2, 1, DVector::from_vec(vec![2.5, 0.0]), Arc::new(model)).unwrap();
    let cfg = SolverConfig {
        subproblems: 8,
        overlap: 10,
        mu: 10.0,
        adaptive: true,
        ..SolverConfig::default()
    };
    let r = solve(&p, &cfg, p.zero_iterate(), Mode::Fotd);
    eprintln!(
        "{:?} after {} iterations, |grad L| = {:.3e}, largest Levenberg shift {:.3e}",
        r.status,
        r.iterations(),
        r.final_kkt(),
        r.records.iter().map(|x| x.gamma).fold(0.0, f64::max)
    );
    let csv = trajectory_csv(&r.solution).unwrap();
    print!("{}", String::from_utf8(csv).unwrap());
}
