//! Horizon decomposition and the overlapping linear-quadratic subproblems.
//!
//! The horizon `[0, N]` is split at knots `0 = n_0 < n_1 < ... < n_M = N`.
//! Subproblem `i` covers `[m1, m2] = [max(n_i - b, 0), min(n_{i+1} + b, N)]`
//! and only its exclusive stages `[n_i, n_{i+1})` are kept when composing.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::newton::{default_definiteness_constant, LqProblem, NewtonData};
use crate::nldp::{DualTrajectory, PrimalDual, Trajectory};

/// Knots, overlap and the resulting subproblem intervals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecompositionPlan {
    horizon: usize,
    knots: Vec<usize>,
    overlap: usize,
}

impl DecompositionPlan {
    /// Evenly spaced knots `n_i = i N / M`.
    pub fn new(horizon: usize, subproblems: usize, overlap: usize) -> Result<Self> {
        if subproblems == 0 || subproblems > horizon {
            return invalid(format!(
                "number of subproblems must be in 1..={horizon}, got {subproblems}"
            ));
        }
        if horizon % subproblems != 0 {
            return invalid(format!(
                "{subproblems} subproblems do not divide the horizon {horizon}; pass explicit knots"
            ));
        }
        let len = horizon / subproblems;
        Self::from_knots((0..=subproblems).map(|i| i * len).collect(), overlap)
    }

    /// Arbitrary strictly increasing knots from `0` to `N`.
    pub fn from_knots(knots: Vec<usize>, overlap: usize) -> Result<Self> {
        if knots.len() < 2 || knots[0] != 0 {
            return invalid("knots must start at 0 and contain at least two entries");
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("knots must be strictly increasing");
        }
        let horizon = *knots.last().unwrap();
        if overlap == 0 || overlap >= horizon {
            return invalid(format!("overlap must be in 1..{horizon}, got {overlap}"));
        }
        Ok(DecompositionPlan {
            horizon,
            knots,
            overlap,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn subproblems(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn knots(&self) -> &[usize] {
        &self.knots
    }

    /// `(m1, m2)` for subproblem `i`.
    pub fn interval(&self, i: usize) -> (usize, usize) {
        let m1 = self.knots[i].saturating_sub(self.overlap);
        let m2 = (self.knots[i + 1] + self.overlap).min(self.horizon);
        (m1, m2)
    }

    /// `[n_i, n_{i+1})`.
    pub fn exclusive(&self, i: usize) -> (usize, usize) {
        (self.knots[i], self.knots[i + 1])
    }

    pub fn is_last(&self, i: usize) -> bool {
        self.interval(i).1 == self.horizon
    }
}

/// Shorthand for [`DecompositionPlan::new`].
pub fn make_plan(horizon: usize, subproblems: usize, overlap: usize) -> Result<DecompositionPlan> {
    DecompositionPlan::new(horizon, subproblems, overlap)
}

/// Boundary variables `d = (p_m1, p_m2, q_m2, zeta_{m2+1})` of a subproblem.
/// Only `d1` enters when the subproblem reaches the end of the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryVars {
    pub d1: DVector<f64>,
    pub d2: DVector<f64>,
    pub d3: DVector<f64>,
    pub d4: DVector<f64>,
}

impl BoundaryVars {
    pub fn zeros(nx: usize, nu: usize) -> Self {
        BoundaryVars {
            d1: DVector::zeros(nx),
            d2: DVector::zeros(nx),
            d3: DVector::zeros(nu),
            d4: DVector::zeros(nx),
        }
    }

    /// Boundary values of subproblem `i` read off a full-horizon
    /// primal-dual vector.
    pub fn from_full(full: &PrimalDual, plan: &DecompositionPlan, i: usize) -> Self {
        let (m1, m2) = plan.interval(i);
        let (nx, nu) = (full.z.nx(), full.z.nu());
        let mut d = BoundaryVars::zeros(nx, nu);
        d.d1.copy_from_slice(full.z.x(m1));
        if m2 < plan.horizon() {
            d.d2.copy_from_slice(full.z.x(m2));
            d.d3.copy_from_slice(full.z.u(m2));
            d.d4.copy_from_slice(full.lambda.stage(m2 + 1));
        }
        d
    }
}

/// Truncation of a full-horizon primal-dual vector to each subproblem window.
pub fn decompose(full: &PrimalDual, plan: &DecompositionPlan) -> Vec<PrimalDual> {
    (0..plan.subproblems())
        .map(|i| truncate(full, plan.interval(i)))
        .collect()
}

fn truncate(full: &PrimalDual, (m1, m2): (usize, usize)) -> PrimalDual {
    let (nx, nu) = (full.z.nx(), full.z.nu());
    let mut z = Trajectory::zeros(m2 - m1, nx, nu);
    let start = full.z.offset(m1);
    let len = z.len();
    z.as_mut_slice()
        .copy_from_slice(&full.z.as_slice()[start..start + len]);
    let mut lambda = DualTrajectory::zeros(m2 - m1, nx);
    lambda
        .as_mut_slice()
        .copy_from_slice(&full.lambda.as_slice()[m1 * nx..(m2 + 1) * nx]);
    PrimalDual { z, lambda }
}

/// Gathers exclusive stages: stage `k` comes from the subproblem whose
/// exclusive range contains it, stage `N` from the last subproblem.
pub fn compose(subs: &[PrimalDual], plan: &DecompositionPlan) -> Result<PrimalDual> {
    let m = plan.subproblems();
    if subs.len() != m {
        return invalid(format!("expected {m} subproblem solutions, got {}", subs.len()));
    }
    let first = &subs[0];
    let (nx, nu) = (first.z.nx(), first.z.nu());
    let n = plan.horizon();
    let mut out = PrimalDual::zeros(n, nx, nu);
    for (i, sub) in subs.iter().enumerate() {
        let (m1, m2) = plan.interval(i);
        if sub.horizon() != m2 - m1 || sub.z.nx() != nx || sub.z.nu() != nu {
            return invalid(format!("subproblem {i} solution has the wrong shape"));
        }
        let (lo, hi) = plan.exclusive(i);
        let hi = if i + 1 == m { hi + 1 } else { hi };
        for k in lo..hi {
            out.z.stage_mut(k).copy_from_slice(sub.z.stage(k - m1));
            out.lambda.stage_mut(k).copy_from_slice(sub.lambda.stage(k - m1));
        }
    }
    Ok(out)
}

/// The linear-quadratic subproblem on `[m1, m2]` built from the
/// linearization `nd`. When `m2 < N` the terminal block is `Q_hat_m2 + mu I`
/// with linear term
/// `grad_{x_m2} L - A_m2^T d4 + S_hat_m2^T d3 - mu d2`; when `m2 = N` the
/// original terminal block and gradient are used.
pub fn assemble_interval(
    nd: &NewtonData,
    m1: usize,
    m2: usize,
    mu: f64,
    d: &BoundaryVars,
) -> Result<LqProblem> {
    let n = nd.horizon();
    let (nx, nu) = (nd.nx(), nd.nu());
    if m1 >= m2 || m2 > n {
        return invalid(format!("invalid interval [{m1}, {m2}] for horizon {n}"));
    }
    if !(mu >= 0.0) {
        return invalid("mu must be nonnegative");
    }
    if d.d1.len() != nx || d.d2.len() != nx || d.d3.len() != nu || d.d4.len() != nx {
        return invalid("boundary variables have wrong dimensions");
    }
    let g = &nd.gradient;
    let mut hessians: Vec<DMatrix<f64>> = nd.modified[m1..m2].to_vec();
    let mut linear: Vec<DVector<f64>> = (m1..m2)
        .map(|k| DVector::from_column_slice(g.z.stage(k)))
        .collect();
    let grad_x = DVector::from_column_slice(g.z.x(m2));
    if m2 == n {
        hessians.push(nd.modified[n].clone());
        linear.push(grad_x);
    } else {
        let mut q = nd.q_hat(m2);
        for j in 0..nx {
            q[(j, j)] += mu;
        }
        hessians.push(q);
        linear.push(grad_x - nd.a[m2].tr_mul(&d.d4) + nd.s_hat(m2).tr_mul(&d.d3) - &d.d2 * mu);
    }
    Ok(LqProblem {
        horizon: m2 - m1,
        nx,
        nu,
        hessians,
        linear,
        a: nd.a[m1..m2].to_vec(),
        b: nd.b[m1..m2].to_vec(),
        offsets: (m1..m2)
            .map(|k| -DVector::from_column_slice(g.lambda.stage(k + 1)))
            .collect(),
        initial: d.d1.clone(),
    })
}

/// Subproblem `i` of `plan`.
pub fn assemble_subproblem(
    nd: &NewtonData,
    plan: &DecompositionPlan,
    i: usize,
    mu: f64,
    d: &BoundaryVars,
) -> Result<LqProblem> {
    if plan.horizon() != nd.horizon() {
        return invalid("plan horizon does not match the linearization");
    }
    if i >= plan.subproblems() {
        return invalid(format!("subproblem index {i} out of range"));
    }
    let (m1, m2) = plan.interval(i);
    assemble_interval(nd, m1, m2, mu, d)
}

/// Certifies the subproblem's reduced Hessian and solves it. `c` overrides
/// the definiteness constant.
pub fn solve_subproblem(sub: &LqProblem, index: usize, mu: f64, c: Option<f64>) -> Result<PrimalDual> {
    let c = c.unwrap_or_else(|| default_definiteness_constant(&sub.hessians));
    if !sub.reduced_hessian_is_pd(c) {
        return Err(Error::MuTooSmall { index, mu });
    }
    sub.solve()
}

/// Approximate Newton direction: all subproblems solved with zero boundary
/// variables, in parallel on the current rayon pool, then composed.
///
/// Subproblems starting at stage 0 take the initial condition
/// `-grad_{lambda_0} L`, which is zero whenever the iterate satisfies
/// `x_0 = x0_bar`; this makes a single subproblem reproduce the full Newton
/// direction from any iterate.
pub fn approximate_direction(
    nd: &NewtonData,
    plan: &DecompositionPlan,
    mu: f64,
    c: Option<f64>,
) -> Result<PrimalDual> {
    let (nx, nu) = (nd.nx(), nd.nu());
    let subs = (0..plan.subproblems())
        .into_par_iter()
        .map(|i| {
            let mut d = BoundaryVars::zeros(nx, nu);
            if plan.interval(i).0 == 0 {
                for (t, v) in d.d1.iter_mut().zip(nd.gradient.lambda.stage(0)) {
                    *t = -v;
                }
            }
            let sub = assemble_subproblem(nd, plan, i, mu, &d)?;
            solve_subproblem(&sub, i, mu, c)
        })
        .collect::<Result<Vec<_>>>()?;
    compose(&subs, plan)
}
