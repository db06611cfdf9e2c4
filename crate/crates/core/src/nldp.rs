//! Problem model for equality-constrained nonlinear dynamic programs
//!
//! ```text
//!   min  sum_{k<N} g_k(x_k, u_k) + g_N(x_N)
//!   s.t. x_{k+1} = f_k(x_k, u_k),  k = 0..N-1
//!        x_0 = x0_bar
//! ```
//!
//! together with the evaluations every solver layer shares: objective,
//! constraint residual, Lagrangian gradient (the KKT residual) and the exact
//! augmented Lagrangian merit function
//! `L_eta = L + eta1/2 |grad_lambda L|^2 + eta2/2 |grad_z L|^2`.
//!
//! The Lagrangian is `g(z) + lambda^T f(z)` with
//! `f(z) = (x_0 - x0_bar; x_1 - f_0(z_0); ...; x_N - f_{N-1}(z_{N-1}))`, so the
//! dynamics multipliers enter stage gradients as `-A_k^T lambda_{k+1}`.
//!
//! All vectors are stored stage-major: `z = (x_0, u_0, x_1, u_1, ..., x_N)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};

/// Stage functions of a dynamic program and their first and second derivatives.
///
/// Implementations must be pure: the same inputs always give bit-identical
/// outputs. Stage indices run over `0..N` for stage terms; the terminal cost
/// depends on `x_N` only.
pub trait StageModel: Send + Sync {
    fn stage_cost(&self, k: usize, x: &[f64], u: &[f64]) -> f64;
    fn terminal_cost(&self, x: &[f64]) -> f64;

    /// Gradient of `g_k` with respect to `(x_k, u_k)`.
    fn stage_cost_gradient(&self, k: usize, x: &[f64], u: &[f64]) -> DVector<f64>;
    fn terminal_cost_gradient(&self, x: &[f64]) -> DVector<f64>;

    /// Hessian of `g_k` with respect to `(x_k, u_k)`.
    fn stage_cost_hessian(&self, k: usize, x: &[f64], u: &[f64]) -> DMatrix<f64>;
    fn terminal_cost_hessian(&self, x: &[f64]) -> DMatrix<f64>;

    fn dynamics(&self, k: usize, x: &[f64], u: &[f64]) -> DVector<f64>;

    /// `(A_k, B_k)`, the Jacobians of `f_k` with respect to `x_k` and `u_k`.
    fn dynamics_jacobians(&self, k: usize, x: &[f64], u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>);

    /// `-sum_j lambda_{k+1,j} * hess f_{k,j}` with respect to `(x_k, u_k)`.
    fn dynamics_hessian_contraction(
        &self,
        k: usize,
        x: &[f64],
        u: &[f64],
        lambda_next: &[f64],
    ) -> DMatrix<f64>;
}

/// A dynamic program instance: dimensions, initial state and stage model.
#[derive(Clone)]
pub struct ProblemDef {
    horizon: usize,
    nx: usize,
    nu: usize,
    initial_state: DVector<f64>,
    model: Arc<dyn StageModel>,
    warnings: Vec<String>,
}

impl fmt::Debug for ProblemDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemDef")
            .field("horizon", &self.horizon)
            .field("nx", &self.nx)
            .field("nu", &self.nu)
            .field("initial_state", &self.initial_state.as_slice())
            .field("warnings", &self.warnings)
            .finish()
    }
}

impl ProblemDef {
    pub fn new(
        horizon: usize,
        nx: usize,
        nu: usize,
        initial_state: DVector<f64>,
        model: Arc<dyn StageModel>,
    ) -> Result<Self> {
        if horizon == 0 || nx == 0 || nu == 0 {
            return invalid("horizon, nx and nu must be positive");
        }
        if initial_state.len() != nx {
            return invalid(format!(
                "initial state has length {}, expected {nx}",
                initial_state.len()
            ));
        }
        Ok(ProblemDef {
            horizon,
            nx,
            nu,
            initial_state,
            model,
            warnings: Vec::new(),
        })
    }

    pub fn with_warning(mut self, warning: impl Into<String>) -> Self {
        self.warnings.push(warning.into());
        self
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial_state
    }

    pub fn model(&self) -> &Arc<dyn StageModel> {
        &self.model
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Total primal dimension `(N+1) nx + N nu`.
    pub fn primal_dim(&self) -> usize {
        (self.horizon + 1) * self.nx + self.horizon * self.nu
    }

    pub fn zero_iterate(&self) -> PrimalDual {
        PrimalDual::zeros(self.horizon, self.nx, self.nu)
    }

    fn check(&self, z: &Trajectory) -> Result<()> {
        if z.horizon != self.horizon || z.nx != self.nx || z.nu != self.nu {
            return invalid(format!(
                "trajectory shape (N={}, nx={}, nu={}) does not match problem (N={}, nx={}, nu={})",
                z.horizon, z.nx, z.nu, self.horizon, self.nx, self.nu
            ));
        }
        Ok(())
    }

    fn check_dual(&self, lambda: &DualTrajectory) -> Result<()> {
        if lambda.horizon != self.horizon || lambda.nx != self.nx {
            return invalid(format!(
                "dual shape (N={}, nx={}) does not match problem (N={}, nx={})",
                lambda.horizon, lambda.nx, self.horizon, self.nx
            ));
        }
        Ok(())
    }
}

/// Primal trajectory `z = (x_0, u_0, ..., x_{N-1}, u_{N-1}, x_N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    horizon: usize,
    nx: usize,
    nu: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(horizon: usize, nx: usize, nu: usize) -> Self {
        Trajectory {
            horizon,
            nx,
            nu,
            data: vec![0.0; (horizon + 1) * nx + horizon * nu],
        }
    }

    pub fn from_vec(horizon: usize, nx: usize, nu: usize, data: Vec<f64>) -> Result<Self> {
        let expected = (horizon + 1) * nx + horizon * nu;
        if data.len() != expected {
            return invalid(format!(
                "trajectory data has length {}, expected {expected}",
                data.len()
            ));
        }
        Ok(Trajectory {
            horizon,
            nx,
            nu,
            data,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Offset of stage `k` in the flat storage.
    #[inline]
    pub fn offset(&self, k: usize) -> usize {
        k * (self.nx + self.nu)
    }

    /// Width of stage `k`: `nx + nu` for `k < N`, `nx` at the terminal stage.
    #[inline]
    pub fn stage_dim(&self, k: usize) -> usize {
        if k < self.horizon {
            self.nx + self.nu
        } else {
            self.nx
        }
    }

    #[inline]
    pub fn x(&self, k: usize) -> &[f64] {
        let o = self.offset(k);
        &self.data[o..o + self.nx]
    }

    #[inline]
    pub fn x_mut(&mut self, k: usize) -> &mut [f64] {
        let o = self.offset(k);
        &mut self.data[o..o + self.nx]
    }

    #[inline]
    pub fn u(&self, k: usize) -> &[f64] {
        debug_assert!(k < self.horizon);
        let o = self.offset(k) + self.nx;
        &self.data[o..o + self.nu]
    }

    #[inline]
    pub fn u_mut(&mut self, k: usize) -> &mut [f64] {
        debug_assert!(k < self.horizon);
        let o = self.offset(k) + self.nx;
        &mut self.data[o..o + self.nu]
    }

    /// `z_k = (x_k, u_k)`, or `x_N` at the terminal stage.
    #[inline]
    pub fn stage(&self, k: usize) -> &[f64] {
        let o = self.offset(k);
        &self.data[o..o + self.stage_dim(k)]
    }

    #[inline]
    pub fn stage_mut(&mut self, k: usize) -> &mut [f64] {
        let o = self.offset(k);
        let d = self.stage_dim(k);
        &mut self.data[o..o + d]
    }
}

/// Multipliers `lambda_0..lambda_N`; `lambda_0` belongs to the initial-state
/// constraint and `lambda_{k+1}` to the k-th dynamics constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct DualTrajectory {
    horizon: usize,
    nx: usize,
    data: Vec<f64>,
}

impl DualTrajectory {
    pub fn zeros(horizon: usize, nx: usize) -> Self {
        DualTrajectory {
            horizon,
            nx,
            data: vec![0.0; (horizon + 1) * nx],
        }
    }

    pub fn from_vec(horizon: usize, nx: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != (horizon + 1) * nx {
            return invalid(format!(
                "dual data has length {}, expected {}",
                data.len(),
                (horizon + 1) * nx
            ));
        }
        Ok(DualTrajectory { horizon, nx, data })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn stage(&self, k: usize) -> &[f64] {
        &self.data[k * self.nx..(k + 1) * self.nx]
    }

    #[inline]
    pub fn stage_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.data[k * self.nx..(k + 1) * self.nx]
    }
}

/// A primal-dual pair. Used for iterates, Newton directions, Lagrangian
/// gradients and subproblem solutions alike.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDual {
    pub z: Trajectory,
    pub lambda: DualTrajectory,
}

/// The Newton direction `(dz, dlambda)`.
pub type NewtonDirection = PrimalDual;

impl PrimalDual {
    pub fn new(z: Trajectory, lambda: DualTrajectory) -> Result<Self> {
        if z.horizon != lambda.horizon || z.nx != lambda.nx {
            return invalid("primal and dual trajectories disagree on shape");
        }
        Ok(PrimalDual { z, lambda })
    }

    pub fn zeros(horizon: usize, nx: usize, nu: usize) -> Self {
        PrimalDual {
            z: Trajectory::zeros(horizon, nx, nu),
            lambda: DualTrajectory::zeros(horizon, nx),
        }
    }

    pub fn horizon(&self) -> usize {
        self.z.horizon
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.z.data.iter().chain(self.lambda.data.iter())
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &PrimalDual) -> f64 {
        self.values().zip(other.values()).map(|(a, b)| a * b).sum()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &PrimalDual) {
        for (a, b) in self.z.data.iter_mut().zip(&other.z.data) {
            *a += alpha * b;
        }
        for (a, b) in self.lambda.data.iter_mut().zip(&other.lambda.data) {
            *a += alpha * b;
        }
    }

    pub fn sub(&self, other: &PrimalDual) -> PrimalDual {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn scaled(&self, alpha: f64) -> PrimalDual {
        let mut out = self.clone();
        out.z.data.iter_mut().for_each(|v| *v *= alpha);
        out.lambda.data.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// Penalty parameters `(eta1, eta2)` of the augmented Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PenaltyParams {
    pub eta1: f64,
    pub eta2: f64,
}

impl PenaltyParams {
    pub fn new(eta1: f64, eta2: f64) -> Result<Self> {
        let p = PenaltyParams { eta1, eta2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta1 > 0.0 && self.eta2 > 0.0) || !self.eta1.is_finite() || !self.eta2.is_finite()
        {
            return invalid(format!(
                "penalty parameters must be positive, got ({}, {})",
                self.eta1, self.eta2
            ));
        }
        Ok(())
    }
}

impl Default for PenaltyParams {
    fn default() -> Self {
        PenaltyParams {
            eta1: 10.0,
            eta2: 0.1,
        }
    }
}

fn finite_or(stage: usize, what: &'static str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { stage, what })
    }
}

/// `g(z) = sum_{k<N} g_k(x_k, u_k) + g_N(x_N)`.
pub fn eval_objective(p: &ProblemDef, z: &Trajectory) -> Result<f64> {
    p.check(z)?;
    let m = p.model();
    let stages: f64 = (0..p.horizon).map(|k| m.stage_cost(k, z.x(k), z.u(k))).sum();
    Ok(stages + m.terminal_cost(z.x(p.horizon)))
}

/// `f(z) = (x_0 - x0_bar; x_{k+1} - f_k(x_k, u_k))`, stage-major.
pub fn eval_constraints(p: &ProblemDef, z: &Trajectory) -> Result<DualTrajectory> {
    p.check(z)?;
    let mut out = DualTrajectory::zeros(p.horizon, p.nx);
    for (o, (x, x0)) in out
        .stage_mut(0)
        .iter_mut()
        .zip(z.x(0).iter().zip(p.initial_state.iter()))
    {
        *o = x - x0;
    }
    for k in 0..p.horizon {
        let fk = p.model().dynamics(k, z.x(k), z.u(k));
        finite_or(k, "dynamics", fk.as_slice())?;
        for (o, (x, f)) in out
            .stage_mut(k + 1)
            .iter_mut()
            .zip(z.x(k + 1).iter().zip(fk.iter()))
        {
            *o = x - f;
        }
    }
    Ok(out)
}

/// `L(z, lambda) = g(z) + lambda^T f(z)`.
pub fn eval_lagrangian(p: &ProblemDef, z: &Trajectory, lambda: &DualTrajectory) -> Result<f64> {
    p.check_dual(lambda)?;
    let g = eval_objective(p, z)?;
    let f = eval_constraints(p, z)?;
    Ok(g + dot(lambda.as_slice(), f.as_slice()))
}

/// Gradient of the Lagrangian. The `z` part is
/// `grad g_k + (lambda_k - A_k^T lambda_{k+1}; -B_k^T lambda_{k+1})` per stage
/// and `grad g_N + lambda_N` at the terminal stage; the `lambda` part is `f(z)`.
pub fn eval_lagrangian_gradient(
    p: &ProblemDef,
    z: &Trajectory,
    lambda: &DualTrajectory,
) -> Result<PrimalDual> {
    p.check(z)?;
    p.check_dual(lambda)?;
    let (nx, n) = (p.nx, p.horizon);
    let m = p.model();
    let mut gz = Trajectory::zeros(n, nx, p.nu);
    for k in 0..n {
        let g = m.stage_cost_gradient(k, z.x(k), z.u(k));
        finite_or(k, "cost gradient", g.as_slice())?;
        let (a, b) = m.dynamics_jacobians(k, z.x(k), z.u(k));
        finite_or(k, "dynamics Jacobian", a.as_slice())?;
        finite_or(k, "dynamics Jacobian", b.as_slice())?;
        let lam_next = DVector::from_column_slice(lambda.stage(k + 1));
        let at = a.tr_mul(&lam_next);
        let bt = b.tr_mul(&lam_next);
        let lam = lambda.stage(k);
        let out = gz.stage_mut(k);
        for i in 0..nx {
            out[i] = g[i] + lam[i] - at[i];
        }
        for j in 0..p.nu {
            out[nx + j] = g[nx + j] - bt[j];
        }
    }
    let g = m.terminal_cost_gradient(z.x(n));
    finite_or(n, "cost gradient", g.as_slice())?;
    for (o, (gi, li)) in gz
        .stage_mut(n)
        .iter_mut()
        .zip(g.iter().zip(lambda.stage(n)))
    {
        *o = gi + li;
    }
    let gl = eval_constraints(p, z)?;
    Ok(PrimalDual {
        z: gz,
        lambda: gl,
    })
}

/// Exact augmented Lagrangian `L + eta1/2 |f|^2 + eta2/2 |grad_z L|^2`.
pub fn eval_merit(
    p: &ProblemDef,
    z: &Trajectory,
    lambda: &DualTrajectory,
    eta: PenaltyParams,
) -> Result<f64> {
    eta.validate()?;
    let grad = eval_lagrangian_gradient(p, z, lambda)?;
    let g = eval_objective(p, z)?;
    Ok(merit_from_parts(g, lambda, &grad, eta))
}

pub(crate) fn merit_from_parts(
    objective: f64,
    lambda: &DualTrajectory,
    grad: &PrimalDual,
    eta: PenaltyParams,
) -> f64 {
    let f = grad.lambda.as_slice();
    let lagrangian = objective + dot(lambda.as_slice(), f);
    let feas = dot(f, f);
    let opt = dot(grad.z.as_slice(), grad.z.as_slice());
    lagrangian + 0.5 * eta.eta1 * feas + 0.5 * eta.eta2 * opt
}

/// Exact Lagrangian Hessian block of stage `k` (`H_N` at `k = N`).
pub fn lagrangian_hessian_block(
    p: &ProblemDef,
    z: &Trajectory,
    lambda: &DualTrajectory,
    k: usize,
) -> Result<DMatrix<f64>> {
    let m = p.model();
    let h = if k < p.horizon {
        let mut h = m.stage_cost_hessian(k, z.x(k), z.u(k));
        h += m.dynamics_hessian_contraction(k, z.x(k), z.u(k), lambda.stage(k + 1));
        h
    } else {
        m.terminal_cost_hessian(z.x(k))
    };
    finite_or(k, "Lagrangian Hessian", h.as_slice())?;
    Ok(h)
}

/// Gradient of the merit function:
/// `[(I + eta2 H) grad_z L + eta1 G^T f; eta2 G grad_z L + f]`, using the
/// exact Lagrangian Hessian.
pub fn eval_merit_gradient(
    p: &ProblemDef,
    z: &Trajectory,
    lambda: &DualTrajectory,
    eta: PenaltyParams,
) -> Result<PrimalDual> {
    eta.validate()?;
    let grad = eval_lagrangian_gradient(p, z, lambda)?;
    let mut hessians = Vec::with_capacity(p.horizon + 1);
    let mut a = Vec::with_capacity(p.horizon);
    let mut b = Vec::with_capacity(p.horizon);
    for k in 0..=p.horizon {
        hessians.push(lagrangian_hessian_block(p, z, lambda, k)?);
        if k < p.horizon {
            let (ak, bk) = p.model().dynamics_jacobians(k, z.x(k), z.u(k));
            a.push(ak);
            b.push(bk);
        }
    }
    Ok(merit_gradient_from_blocks(&hessians, &a, &b, &grad, eta))
}

pub(crate) fn merit_gradient_from_blocks(
    hessians: &[DMatrix<f64>],
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    grad: &PrimalDual,
    eta: PenaltyParams,
) -> PrimalDual {
    let hv = hessian_apply(hessians, &grad.z);
    let gtf = jacobian_transpose_apply(a, b, &grad.lambda, grad.z.nu);
    let gv = jacobian_apply(a, b, &grad.z);
    let mut out = grad.clone();
    for ((o, h), g) in out
        .z
        .as_mut_slice()
        .iter_mut()
        .zip(hv.as_slice())
        .zip(gtf.as_slice())
    {
        *o += eta.eta2 * h + eta.eta1 * g;
    }
    for (o, g) in out.lambda.as_mut_slice().iter_mut().zip(gv.as_slice()) {
        *o += eta.eta2 * g;
    }
    out
}

/// Block-diagonal product `H v`.
pub(crate) fn hessian_apply(hessians: &[DMatrix<f64>], v: &Trajectory) -> Trajectory {
    let mut out = Trajectory::zeros(v.horizon, v.nx, v.nu);
    for (k, h) in hessians.iter().enumerate() {
        let vk = v.stage(k);
        let o = out.stage_mut(k);
        for (i, oi) in o.iter_mut().enumerate() {
            *oi = (0..vk.len()).map(|j| h[(i, j)] * vk[j]).sum();
        }
    }
    out
}

/// Constraint Jacobian product `G v`:
/// row 0 is `v_x0`, row k+1 is `v_x{k+1} - A_k v_xk - B_k v_uk`.
pub(crate) fn jacobian_apply(a: &[DMatrix<f64>], b: &[DMatrix<f64>], v: &Trajectory) -> DualTrajectory {
    let n = v.horizon;
    let mut out = DualTrajectory::zeros(n, v.nx);
    out.stage_mut(0).copy_from_slice(v.x(0));
    for k in 0..n {
        let o = out.stage_mut(k + 1);
        let (x, u, xn) = (v.x(k), v.u(k), v.x(k + 1));
        for i in 0..v.nx {
            let ax: f64 = (0..v.nx).map(|j| a[k][(i, j)] * x[j]).sum();
            let bu: f64 = (0..v.nu).map(|j| b[k][(i, j)] * u[j]).sum();
            o[i] = xn[i] - ax - bu;
        }
    }
    out
}

/// Transposed Jacobian product `G^T w`.
pub(crate) fn jacobian_transpose_apply(
    a: &[DMatrix<f64>],
    b: &[DMatrix<f64>],
    w: &DualTrajectory,
    nu: usize,
) -> Trajectory {
    let (n, nx) = (w.horizon, w.nx);
    let mut out = Trajectory::zeros(n, nx, nu);
    for k in 0..n {
        let (wk, wn) = (w.stage(k), w.stage(k + 1));
        let o = out.stage_mut(k);
        for i in 0..nx {
            o[i] = wk[i] - (0..nx).map(|j| a[k][(j, i)] * wn[j]).sum::<f64>();
        }
        for i in 0..nu {
            o[nx + i] = -(0..nx).map(|j| b[k][(j, i)] * wn[j]).sum::<f64>();
        }
    }
    out.stage_mut(n).copy_from_slice(w.stage(n));
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
