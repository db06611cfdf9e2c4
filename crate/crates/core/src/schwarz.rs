//! Overlapping Schwarz baseline: nonlinear subproblems on every window,
//! solved to optimality and composed.
//!
//! The subproblem on `[m1, m2]` keeps the original stage costs and dynamics,
//! pins `x_m1` to the current iterate and, unless it reaches the end of the
//! horizon, replaces the terminal cost by
//!
//! ```text
//!   g_m2(x, u_bar) - lambda_bar^T f_m2(x, u_bar) + mu/2 |x - x_bar|^2
//! ```
//!
//! with `(x_bar, u_bar, lambda_bar) = (x_m2, u_m2, lambda_{m2+1})` of the
//! current iterate.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::newton::{assemble_newton_data, solve_full_newton};
use crate::nldp::{PrimalDual, ProblemDef, StageModel};
use crate::otd::{compose, decompose, BoundaryVars, DecompositionPlan};
use crate::sqp::{
    check_shape, empty_report, merit_at, pin_initial_state, solve_on_current_pool, IterationRecord,
    Mode, SolveReport, SolverConfig, Status,
};

/// The nonlinear subproblem of one window with its boundary data.
#[derive(Debug, Clone)]
pub struct NonlinearSubproblem {
    pub index: usize,
    pub m1: usize,
    pub m2: usize,
    /// `(x_bar_m1, x_bar_m2, u_bar_m2, lambda_bar_{m2+1})`.
    pub boundary: BoundaryVars,
    pub mu: f64,
    pub parent: ProblemDef,
}

struct WindowModel {
    parent: Arc<dyn StageModel>,
    m1: usize,
    m2: usize,
    last: bool,
    mu: f64,
    x_bar: DVector<f64>,
    u_bar: DVector<f64>,
    lambda_bar: DVector<f64>,
}

impl StageModel for WindowModel {
    fn stage_cost(&self, k: usize, x: &[f64], u: &[f64]) -> f64 {
        self.parent.stage_cost(k + self.m1, x, u)
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        if self.last {
            return self.parent.terminal_cost(x);
        }
        let u = self.u_bar.as_slice();
        let f = self.parent.dynamics(self.m2, x, u);
        let dx = DVector::from_column_slice(x) - &self.x_bar;
        self.parent.stage_cost(self.m2, x, u) - self.lambda_bar.dot(&f)
            + 0.5 * self.mu * dx.norm_squared()
    }

    fn stage_cost_gradient(&self, k: usize, x: &[f64], u: &[f64]) -> DVector<f64> {
        self.parent.stage_cost_gradient(k + self.m1, x, u)
    }

    fn terminal_cost_gradient(&self, x: &[f64]) -> DVector<f64> {
        if self.last {
            return self.parent.terminal_cost_gradient(x);
        }
        let nx = x.len();
        let u = self.u_bar.as_slice();
        let g = self.parent.stage_cost_gradient(self.m2, x, u);
        let (a, _) = self.parent.dynamics_jacobians(self.m2, x, u);
        let dx = DVector::from_column_slice(x) - &self.x_bar;
        g.rows(0, nx).into_owned() - a.tr_mul(&self.lambda_bar) + dx * self.mu
    }

    fn stage_cost_hessian(&self, k: usize, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        self.parent.stage_cost_hessian(k + self.m1, x, u)
    }

    fn terminal_cost_hessian(&self, x: &[f64]) -> DMatrix<f64> {
        if self.last {
            return self.parent.terminal_cost_hessian(x);
        }
        let nx = x.len();
        let u = self.u_bar.as_slice();
        let full = self.parent.stage_cost_hessian(self.m2, x, u)
            + self
                .parent
                .dynamics_hessian_contraction(self.m2, x, u, self.lambda_bar.as_slice());
        let mut q = full.view((0, 0), (nx, nx)).into_owned();
        for j in 0..nx {
            q[(j, j)] += self.mu;
        }
        q
    }

    fn dynamics(&self, k: usize, x: &[f64], u: &[f64]) -> DVector<f64> {
        self.parent.dynamics(k + self.m1, x, u)
    }

    fn dynamics_jacobians(&self, k: usize, x: &[f64], u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        self.parent.dynamics_jacobians(k + self.m1, x, u)
    }

    fn dynamics_hessian_contraction(
        &self,
        k: usize,
        x: &[f64],
        u: &[f64],
        lambda_next: &[f64],
    ) -> DMatrix<f64> {
        self.parent
            .dynamics_hessian_contraction(k + self.m1, x, u, lambda_next)
    }
}

impl NonlinearSubproblem {
    /// Subproblem `i` of `plan` with boundary data read off `current`.
    pub fn new(
        parent: &ProblemDef,
        plan: &DecompositionPlan,
        i: usize,
        current: &PrimalDual,
        mu: f64,
    ) -> Self {
        let (m1, m2) = plan.interval(i);
        NonlinearSubproblem {
            index: i,
            m1,
            m2,
            boundary: BoundaryVars::from_full(current, plan, i),
            mu,
            parent: parent.clone(),
        }
    }

    pub fn is_last(&self) -> bool {
        self.m2 == self.parent.horizon()
    }

    /// The window as a standalone dynamic program.
    pub fn problem(&self) -> Result<ProblemDef> {
        let model = WindowModel {
            parent: self.parent.model().clone(),
            m1: self.m1,
            m2: self.m2,
            last: self.is_last(),
            mu: self.mu,
            x_bar: self.boundary.d2.clone(),
            u_bar: self.boundary.d3.clone(),
            lambda_bar: self.boundary.d4.clone(),
        };
        ProblemDef::new(
            self.m2 - self.m1,
            self.parent.nx(),
            self.parent.nu(),
            self.boundary.d1.clone(),
            Arc::new(model),
        )
    }
}

/// Solves the subproblem to `cfg.inner_tol` with the centralized SQP,
/// starting from `warm`.
pub fn solve_nonlinear_subproblem(
    sub: &NonlinearSubproblem,
    warm: PrimalDual,
    cfg: &SolverConfig,
) -> Result<PrimalDual> {
    let p = sub.problem()?;
    let inner = SolverConfig {
        kkt_tol: cfg.inner_tol,
        step_tol: cfg.inner_tol * 1e-2,
        max_iters: cfg.inner_max_iters,
        diagnostics: false,
        adaptive: false,
        ..cfg.clone()
    };
    let report = solve_on_current_pool(&p, &inner, warm, Mode::Centralized);
    match report.status {
        Status::ConvergedKkt | Status::ConvergedStep => Ok(report.solution),
        Status::MaxIters => Err(Error::SubproblemFailed {
            index: sub.index,
            reason: format!(
                "inner solve stopped at residual {:e} after {} iterations",
                report.final_kkt(),
                report.iterations()
            ),
        }),
        Status::Error => Err(Error::SubproblemFailed {
            index: sub.index,
            reason: report
                .error
                .map_or_else(|| "unknown".to_string(), |e| e.to_string()),
        }),
    }
}

/// One Schwarz sweep: every window solved from the current iterate, then
/// composed.
pub fn schwarz_iteration(
    p: &ProblemDef,
    it: &PrimalDual,
    plan: &DecompositionPlan,
    cfg: &SolverConfig,
) -> Result<PrimalDual> {
    let warm = decompose(it, plan);
    let subs = warm
        .into_par_iter()
        .enumerate()
        .map(|(i, w)| {
            let sub = NonlinearSubproblem::new(p, plan, i, it, cfg.mu);
            solve_nonlinear_subproblem(&sub, w, cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    compose(&subs, plan)
}

/// Runs the Schwarz scheme for at most `cfg.schwarz_max_iters` sweeps with
/// the same stopping tests as the SQP driver.
pub fn schwarz_solve(p: &ProblemDef, cfg: &SolverConfig, init: PrimalDual) -> SolveReport {
    let mut report = empty_report(cfg, &init);
    if let Err(e) = cfg.validate().and_then(|_| check_shape(p, &init)) {
        report.error = Some(e);
        return report;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build();
    match pool {
        Ok(pool) => pool.install(|| run(p, cfg, init, &mut report)),
        Err(e) => report.error = Some(Error::InvalidArgument(format!("thread pool: {e}"))),
    }
    report
}

fn run(p: &ProblemDef, cfg: &SolverConfig, init: PrimalDual, report: &mut SolveReport) {
    let clock = Instant::now();
    let mut it = init;
    pin_initial_state(p, &mut it);
    let plan = match cfg.plan(p.horizon()) {
        Ok(plan) => plan,
        Err(e) => return fail(report, it, e),
    };
    let budget = cfg.schwarz_max_iters;
    for iter in 0..=budget {
        let (merit, grad) = match merit_at(p, &it, cfg.eta) {
            Ok(v) => v,
            Err(e) => return fail(report, it, e),
        };
        let kkt = grad.norm();
        let mut record = IterationRecord {
            iter,
            kkt_residual: kkt,
            merit,
            stepsize: None,
            gamma: 0.0,
            dir_err_ratio: None,
            wall_ms: 0.0,
            descent_ok: true,
        };
        if kkt <= cfg.kkt_tol || iter == budget {
            record.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
            report.records.push(record);
            report.status = if kkt <= cfg.kkt_tol {
                Status::ConvergedKkt
            } else {
                Status::MaxIters
            };
            break;
        }
        let next = match schwarz_iteration(p, &it, &plan, cfg) {
            Ok(n) => n,
            Err(e) => return fail(report, it, e),
        };
        let step = next.sub(&it).norm();
        record.stepsize = Some(1.0);
        record.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
        report.records.push(record);
        it = next;
        pin_initial_state(p, &mut it);
        if step <= cfg.step_tol {
            match merit_at(p, &it, cfg.eta) {
                Ok((merit, grad)) => report.records.push(IterationRecord {
                    iter: iter + 1,
                    kkt_residual: grad.norm(),
                    merit,
                    stepsize: None,
                    gamma: 0.0,
                    dir_err_ratio: None,
                    wall_ms: clock.elapsed().as_secs_f64() * 1e3,
                    descent_ok: true,
                }),
                Err(e) => return fail(report, it, e),
            }
            report.status = if report.final_kkt() <= cfg.kkt_tol {
                Status::ConvergedKkt
            } else {
                Status::ConvergedStep
            };
            break;
        }
    }
    report.solution = it;
}

fn fail(report: &mut SolveReport, it: PrimalDual, e: Error) {
    log::warn!("Schwarz solve stopped: {e}");
    report.status = Status::Error;
    report.error = Some(e);
    report.solution = it;
}

/// One Newton step on every window subproblem at the truncated iterate,
/// with boundary data from `(z, lambda)` and no Hessian modification, then
/// composed.
pub fn one_newton_schwarz_step(
    p: &ProblemDef,
    it: &PrimalDual,
    plan: &DecompositionPlan,
    mu: f64,
) -> Result<PrimalDual> {
    let parts = decompose(it, plan);
    let next = parts
        .into_par_iter()
        .enumerate()
        .map(|(i, mut local)| {
            let sub = NonlinearSubproblem::new(p, plan, i, it, mu);
            let sp = sub.problem()?;
            let nd = assemble_newton_data(&sp, &local.z, &local.lambda)?;
            let dir = solve_full_newton(&nd)?;
            local.axpy(1.0, &dir);
            Ok(local)
        })
        .collect::<Result<Vec<_>>>()?;
    compose(&next, plan)
}
