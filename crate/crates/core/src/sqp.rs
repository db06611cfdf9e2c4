//! SQP outer loop with the exact augmented Lagrangian merit function.
//!
//! Each iteration linearizes at `(z, lambda)`, certifies (and if needed
//! shifts) the Hessian, computes a search direction either from the
//! overlapping subproblems or from the full Newton system, checks the
//! descent inequality `grad L_eta^T d <= -eta2/2 |grad L|^2`, and backtracks
//! on the merit function until the Armijo condition holds.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::newton::{assemble_newton_data, modify_hessian, solve_full_newton, NewtonData};
use crate::nldp::{
    eval_lagrangian_gradient, eval_merit, eval_merit_gradient, eval_objective, merit_from_parts,
    DualTrajectory, PenaltyParams, PrimalDual, ProblemDef, Trajectory,
};
use crate::otd::{approximate_direction, DecompositionPlan};

/// Smallest stepsize tried before the line search gives up.
pub const MIN_STEP: f64 = 1e-12;

/// Consecutive penalty adaptations allowed within one iteration.
pub const MAX_ADAPTATIONS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AssertLevel {
    /// Descent violations are counted and reported.
    #[default]
    Off,
    /// A descent violation aborts the solve.
    On,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Fotd,
    Centralized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub mu: f64,
    pub eta: PenaltyParams,
    pub beta: f64,
    pub backtrack: f64,
    pub subproblems: usize,
    pub overlap: usize,
    /// Explicit knots; overrides even spacing.
    pub knots: Option<Vec<usize>>,
    pub kkt_tol: f64,
    pub step_tol: f64,
    pub max_iters: usize,
    /// Constant `c` of the `H + c G^T G` test.
    pub definiteness_c: Option<f64>,
    pub hessian_modification: bool,
    pub gamma_step: f64,
    pub adaptive: bool,
    pub nu: f64,
    pub rho_hat: f64,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    pub assert_level: AssertLevel,
    /// Compute the direction error against the exact Newton direction.
    pub diagnostics: bool,
    pub schwarz_max_iters: usize,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            mu: 25.0,
            eta: PenaltyParams::default(),
            beta: 0.1,
            backtrack: 0.9,
            subproblems: 10,
            overlap: 5,
            knots: None,
            kkt_tol: 1e-6,
            step_tol: 1e-6,
            max_iters: 40,
            definiteness_c: None,
            hessian_modification: true,
            gamma_step: 2.0,
            adaptive: false,
            nu: 2.0,
            rho_hat: 0.5,
            workers: 0,
            assert_level: AssertLevel::Off,
            diagnostics: false,
            schwarz_max_iters: 30,
            inner_tol: 1e-8,
            inner_max_iters: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.eta.validate()?;
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return invalid(format!("mu must be finite and nonnegative, got {}", self.mu));
        }
        if !(self.beta > 0.0 && self.beta < 0.5) {
            return invalid(format!("beta must lie in (0, 1/2), got {}", self.beta));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return invalid(format!("backtrack factor must lie in (0, 1), got {}", self.backtrack));
        }
        if !(self.gamma_step > 1.0) {
            return invalid("gamma_step must exceed 1");
        }
        if !(self.nu > 1.0) {
            return invalid("nu must exceed 1");
        }
        if !(self.rho_hat > 0.0 && self.rho_hat < 1.0) {
            return invalid("rho_hat must lie in (0, 1)");
        }
        if let Some(c) = self.definiteness_c {
            if !(c > 0.0) {
                return invalid("definiteness_c must be positive");
            }
        }
        if !(self.kkt_tol >= 0.0 && self.step_tol >= 0.0) {
            return invalid("tolerances must be nonnegative");
        }
        Ok(())
    }

    /// Decomposition plan for a problem of horizon `n`.
    pub fn plan(&self, n: usize) -> Result<DecompositionPlan> {
        match &self.knots {
            Some(k) => {
                if k.last() != Some(&n) {
                    return invalid(format!("knots must end at the horizon {n}"));
                }
                DecompositionPlan::from_knots(k.clone(), self.overlap)
            }
            None => DecompositionPlan::new(n, self.subproblems, self.overlap),
        }
    }
}

/// One round of the penalty adaptation: `eta2 /= nu`, `eta1 *= nu^2`,
/// `b += ceil(4 ln(nu) / ln(1/rho_hat))`.
pub fn adapt_penalties(cfg: &SolverConfig, nu: f64) -> Result<SolverConfig> {
    if !(nu > 1.0) {
        return invalid("nu must exceed 1");
    }
    let mut out = cfg.clone();
    out.eta.eta2 /= nu;
    out.eta.eta1 *= nu * nu;
    out.overlap += (4.0 * nu.ln() / (1.0 / cfg.rho_hat).ln()).ceil() as usize;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub kkt_residual: f64,
    pub merit: f64,
    /// `None` on the final record, where no step is taken.
    pub stepsize: Option<f64>,
    pub gamma: f64,
    pub dir_err_ratio: Option<f64>,
    /// Milliseconds since the start of the solve.
    pub wall_ms: f64,
    /// Whether the descent inequality held for the accepted direction.
    pub descent_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    ConvergedKkt,
    ConvergedStep,
    MaxIters,
    Error,
}

impl Status {
    pub fn converged(self) -> bool {
        matches!(self, Status::ConvergedKkt | Status::ConvergedStep)
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub records: Vec<IterationRecord>,
    pub solution: PrimalDual,
    pub status: Status,
    pub error: Option<Error>,
    /// Iterations at which the descent inequality failed.
    pub descent_violations: usize,
    pub adaptations: usize,
    /// Penalties in force when the solve ended.
    pub final_eta: PenaltyParams,
    pub final_overlap: usize,
}

impl SolveReport {
    /// Number of steps taken.
    pub fn iterations(&self) -> usize {
        self.records.iter().filter(|r| r.stepsize.is_some()).count()
    }

    pub fn final_kkt(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.kkt_residual)
    }

    pub fn total_ms(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.wall_ms)
    }
}

/// Backtracking on `phi` from `alpha = 1` by `factor` until
/// `phi(alpha) <= phi0 + beta alpha slope` (plus a roundoff allowance).
pub fn backtrack<F>(phi0: f64, slope: f64, beta: f64, factor: f64, mut phi: F) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(slope < 0.0) {
        return Err(Error::NonDescent { slope });
    }
    let slack = 10.0 * f64::EPSILON * (1.0 + phi0.abs());
    let mut alpha = 1.0;
    while alpha >= MIN_STEP {
        let value = phi(alpha)?;
        if value <= phi0 + beta * alpha * slope + slack {
            return Ok((alpha, value));
        }
        alpha *= factor;
    }
    Err(Error::LineSearchFailed { min_step: MIN_STEP })
}

/// Armijo backtracking on the merit function along `direction`.
pub fn line_search(
    p: &ProblemDef,
    z: &Trajectory,
    lambda: &DualTrajectory,
    direction: &PrimalDual,
    eta: PenaltyParams,
    beta: f64,
    factor: f64,
) -> Result<(f64, f64)> {
    let phi0 = eval_merit(p, z, lambda, eta)?;
    let slope = eval_merit_gradient(p, z, lambda, eta)?.dot(direction);
    let base = PrimalDual::new(z.clone(), lambda.clone())?;
    backtrack(phi0, slope, beta, factor, |alpha| {
        let mut trial = base.clone();
        trial.axpy(alpha, direction);
        eval_merit(p, &trial.z, &trial.lambda, eta)
    })
}

pub(crate) fn merit_at(p: &ProblemDef, it: &PrimalDual, eta: PenaltyParams) -> Result<(f64, PrimalDual)> {
    let grad = eval_lagrangian_gradient(p, &it.z, &it.lambda)?;
    let g = eval_objective(p, &it.z)?;
    Ok((merit_from_parts(g, &it.lambda, &grad, eta), grad))
}

pub(crate) fn pin_initial_state(p: &ProblemDef, it: &mut PrimalDual) {
    it.z.x_mut(0).copy_from_slice(p.initial_state().as_slice());
}

/// Search direction for `mode` from prepared linearization data.
pub fn search_direction(
    nd: &NewtonData,
    cfg: &SolverConfig,
    plan: &DecompositionPlan,
    mode: Mode,
) -> Result<PrimalDual> {
    match mode {
        Mode::Fotd => approximate_direction(nd, plan, cfg.mu, cfg.definiteness_c),
        Mode::Centralized => solve_full_newton(nd),
    }
}

/// `|d_approx - d_exact| / |d_exact|` for prepared linearization data.
pub fn direction_error_ratio(nd: &NewtonData, plan: &DecompositionPlan, mu: f64, c: Option<f64>) -> Result<f64> {
    let exact = solve_full_newton(nd)?;
    let norm = exact.norm();
    if norm == 0.0 {
        return Err(Error::UndefinedRatio);
    }
    let approx = approximate_direction(nd, plan, mu, c)?;
    Ok(approx.sub(&exact).norm() / norm)
}

/// Direction error of the overlapping approximation at `(z, lambda)`,
/// relative to the exact Newton direction, after the configured Hessian
/// modification.
pub fn direction_error_diagnostic(
    p: &ProblemDef,
    z: &Trajectory,
    lambda: &DualTrajectory,
    cfg: &SolverConfig,
) -> Result<f64> {
    let nd = prepare(p, z, lambda, cfg)?;
    direction_error_ratio(&nd, &cfg.plan(p.horizon())?, cfg.mu, cfg.definiteness_c)
}

fn prepare(p: &ProblemDef, z: &Trajectory, lambda: &DualTrajectory, cfg: &SolverConfig) -> Result<NewtonData> {
    let nd = assemble_newton_data(p, z, lambda)?;
    if cfg.hessian_modification {
        modify_hessian(&nd, cfg.definiteness_c, cfg.gamma_step)
    } else {
        Ok(nd)
    }
}

/// Outcome of a single iteration.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub next: PrimalDual,
    pub record: IterationRecord,
    pub step_norm: f64,
    /// Configuration after any penalty adaptation.
    pub cfg: SolverConfig,
    pub adaptations: usize,
}

/// Performs one SQP iteration from `it` (whose `x_0` must equal the
/// initial state). `iter` and `clock` only label the record.
pub fn sqp_step(
    p: &ProblemDef,
    it: &PrimalDual,
    cfg: &SolverConfig,
    mode: Mode,
    iter: usize,
    clock: Instant,
) -> Result<StepOutcome> {
    let nd = prepare(p, &it.z, &it.lambda, cfg)?;
    let kkt = nd.kkt_residual();
    let g = eval_objective(p, &it.z)?;
    let mut cfg = cfg.clone();
    let mut adaptations = 0;
    let (direction, slope, descent_ok, plan) = loop {
        // centralized runs only need a plan for the diagnostic
        let plan = if mode == Mode::Fotd || cfg.diagnostics {
            Some(cfg.plan(p.horizon())?)
        } else {
            None
        };
        let direction = match &plan {
            Some(plan) => search_direction(&nd, &cfg, plan, mode)?,
            None => solve_full_newton(&nd)?,
        };
        let slope = nd.merit_gradient(cfg.eta).dot(&direction);
        let bound = -0.5 * cfg.eta.eta2 * kkt * kkt;
        let ok = slope <= bound;
        if ok || !cfg.adaptive {
            if !ok && cfg.assert_level == AssertLevel::On {
                return Err(Error::DescentViolation { slope, bound });
            }
            break (direction, slope, ok, plan);
        }
        if adaptations == MAX_ADAPTATIONS {
            return Err(Error::AdaptivityFailed(adaptations));
        }
        adaptations += 1;
        cfg = adapt_penalties(&cfg, cfg.nu)?;
        let cap = p.horizon().saturating_sub(1).max(1);
        if cfg.overlap > cap {
            cfg.overlap = cap;
        }
        log::debug!(
            "iteration {iter}: descent inequality failed, eta -> ({}, {}), b -> {}",
            cfg.eta.eta1,
            cfg.eta.eta2,
            cfg.overlap
        );
    };
    let merit = merit_from_parts(g, &it.lambda, &nd.gradient, cfg.eta);
    let dir_err_ratio = if let Some(plan) = plan.as_ref().filter(|_| cfg.diagnostics) {
        match direction_error_ratio(&nd, plan, cfg.mu, cfg.definiteness_c) {
            Ok(r) => Some(r),
            Err(Error::UndefinedRatio) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let (alpha, _) = backtrack(merit, slope, cfg.beta, cfg.backtrack, |alpha| {
        let mut trial = it.clone();
        trial.axpy(alpha, &direction);
        Ok(merit_at(p, &trial, cfg.eta)?.0)
    })?;
    let mut next = it.clone();
    next.axpy(alpha, &direction);
    pin_initial_state(p, &mut next);
    let step_norm = alpha * direction.norm();
    let record = IterationRecord {
        iter,
        kkt_residual: kkt,
        merit,
        stepsize: Some(alpha),
        gamma: nd.gamma_applied,
        dir_err_ratio,
        wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        descent_ok,
    };
    Ok(StepOutcome {
        next,
        record,
        step_norm,
        cfg,
        adaptations,
    })
}

/// Runs the SQP loop until `|grad L| <= kkt_tol`, a step shorter than
/// `step_tol`, or `max_iters` steps. Errors end the run with
/// [`Status::Error`] and keep the history.
pub fn solve(p: &ProblemDef, cfg: &SolverConfig, init: PrimalDual, mode: Mode) -> SolveReport {
    let mut report = empty_report(cfg, &init);
    if let Err(e) = cfg.validate().and_then(|_| check_shape(p, &init)) {
        report.error = Some(e);
        return report;
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build();
    match pool {
        Ok(pool) => pool.install(|| run(p, cfg, init, mode, &mut report)),
        Err(e) => report.error = Some(Error::InvalidArgument(format!("thread pool: {e}"))),
    }
    report
}

/// Like [`solve`] but runs on the caller's thread pool, ignoring
/// `cfg.workers`. Used for nested solves inside a parallel region.
pub fn solve_on_current_pool(p: &ProblemDef, cfg: &SolverConfig, init: PrimalDual, mode: Mode) -> SolveReport {
    let mut report = empty_report(cfg, &init);
    if let Err(e) = cfg.validate().and_then(|_| check_shape(p, &init)) {
        report.error = Some(e);
        return report;
    }
    run(p, cfg, init, mode, &mut report);
    report
}

pub(crate) fn empty_report(cfg: &SolverConfig, init: &PrimalDual) -> SolveReport {
    SolveReport {
        records: Vec::new(),
        solution: init.clone(),
        status: Status::Error,
        error: None,
        descent_violations: 0,
        adaptations: 0,
        final_eta: cfg.eta,
        final_overlap: cfg.overlap,
    }
}

pub(crate) fn check_shape(p: &ProblemDef, init: &PrimalDual) -> Result<()> {
    if init.horizon() != p.horizon() || init.z.nx() != p.nx() || init.z.nu() != p.nu() {
        return invalid("initial iterate does not match the problem dimensions");
    }
    Ok(())
}

fn run(p: &ProblemDef, cfg: &SolverConfig, init: PrimalDual, mode: Mode, report: &mut SolveReport) {
    let clock = Instant::now();
    let mut it = init;
    pin_initial_state(p, &mut it);
    let mut cfg = cfg.clone();
    for iter in 0..=cfg.max_iters {
        let kkt = match eval_lagrangian_gradient(p, &it.z, &it.lambda) {
            Ok(g) => g.norm(),
            Err(e) => return fail(report, it, e),
        };
        if kkt <= cfg.kkt_tol || iter == cfg.max_iters {
            let merit = match merit_at(p, &it, cfg.eta) {
                Ok((m, _)) => m,
                Err(e) => return fail(report, it, e),
            };
            report.records.push(IterationRecord {
                iter,
                kkt_residual: kkt,
                merit,
                stepsize: None,
                gamma: 0.0,
                dir_err_ratio: None,
                wall_ms: clock.elapsed().as_secs_f64() * 1e3,
                descent_ok: true,
            });
            report.status = if kkt <= cfg.kkt_tol {
                Status::ConvergedKkt
            } else {
                Status::MaxIters
            };
            break;
        }
        let out = match sqp_step(p, &it, &cfg, mode, iter, clock) {
            Ok(o) => o,
            Err(e) => return fail(report, it, e),
        };
        if !out.record.descent_ok {
            report.descent_violations += 1;
        }
        report.adaptations += out.adaptations;
        report.records.push(out.record);
        cfg = out.cfg;
        it = out.next;
        if out.step_norm <= cfg.step_tol {
            let merit_kkt = merit_at(p, &it, cfg.eta);
            match merit_kkt {
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
    report.final_eta = cfg.eta;
    report.final_overlap = cfg.overlap;
    report.solution = it;
}

fn fail(report: &mut SolveReport, it: PrimalDual, e: Error) {
    log::warn!("solve stopped: {e}");
    report.status = Status::Error;
    report.error = Some(e);
    report.solution = it;
}
