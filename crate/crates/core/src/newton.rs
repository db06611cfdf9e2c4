//! Linearization at an iterate and the structured Newton/KKT solve.
//!
//! The Newton system
//!
//! ```text
//!   [ H_hat  G^T ] [dz     ]     [ grad_z L      ]
//!   [ G      0   ] [dlambda] = - [ grad_lambda L ]
//! ```
//!
//! is the KKT system of a linear-quadratic dynamic program ([`LqProblem`]),
//! and so is every overlapping subproblem built from it. Both are solved by
//! the same banded factorization of the stage-interleaved KKT matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{block_tridiagonal_is_pd, BandMatrix};
use crate::nldp::{
    eval_lagrangian_gradient, lagrangian_hessian_block, merit_gradient_from_blocks, DualTrajectory,
    NewtonDirection, PenaltyParams, PrimalDual, ProblemDef, Trajectory,
};

/// Smallest Cholesky pivot accepted as positive by the definiteness test.
pub const PIVOT_TOL: f64 = 1e-10;

/// Linearization of the problem at one iterate.
#[derive(Debug, Clone)]
pub struct NewtonData {
    horizon: usize,
    nx: usize,
    nu: usize,
    /// Exact Lagrangian Hessian blocks `H_0..H_N`.
    pub hessian: Vec<DMatrix<f64>>,
    /// Modified blocks `H_hat_k = H_k + gamma I`.
    pub modified: Vec<DMatrix<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    /// Lagrangian gradient `(grad_z L, grad_lambda L)`.
    pub gradient: PrimalDual,
    pub gamma_applied: f64,
}

impl NewtonData {
    /// Builds linearization data from raw blocks. `hessian` holds `N+1` blocks
    /// (`(nx+nu)^2` for `k < N`, `nx^2` at `N`), `a`/`b` hold `N` Jacobians.
    pub fn from_blocks(
        hessian: Vec<DMatrix<f64>>,
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        gradient: PrimalDual,
    ) -> Result<Self> {
        let n = gradient.horizon();
        let (nx, nu) = (gradient.z.nx(), gradient.z.nu());
        if hessian.len() != n + 1 || a.len() != n || b.len() != n {
            return invalid("block counts do not match the horizon");
        }
        for k in 0..=n {
            let d = if k < n { nx + nu } else { nx };
            if hessian[k].shape() != (d, d) {
                return invalid(format!("Hessian block {k} has wrong shape"));
            }
            if k < n && (a[k].shape() != (nx, nx) || b[k].shape() != (nx, nu)) {
                return invalid(format!("Jacobian block {k} has wrong shape"));
            }
        }
        Ok(NewtonData {
            horizon: n,
            nx,
            nu,
            modified: hessian.clone(),
            hessian,
            a,
            b,
            gradient,
            gamma_applied: 0.0,
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

    /// `Q_hat_k`, the state-state part of the modified block.
    pub fn q_hat(&self, k: usize) -> DMatrix<f64> {
        self.modified[k].view((0, 0), (self.nx, self.nx)).into_owned()
    }

    /// `S_hat_k` (`nu x nx`).
    pub fn s_hat(&self, k: usize) -> DMatrix<f64> {
        self.modified[k]
            .view((self.nx, 0), (self.nu, self.nx))
            .into_owned()
    }

    /// `R_hat_k`.
    pub fn r_hat(&self, k: usize) -> DMatrix<f64> {
        self.modified[k]
            .view((self.nx, self.nx), (self.nu, self.nu))
            .into_owned()
    }

    pub fn kkt_residual(&self) -> f64 {
        self.gradient.norm()
    }

    /// Merit gradient at the linearization point, using the exact Hessian.
    pub fn merit_gradient(&self, eta: PenaltyParams) -> PrimalDual {
        merit_gradient_from_blocks(&self.hessian, &self.a, &self.b, &self.gradient, eta)
    }

    /// The full-horizon Newton system as a linear-quadratic program.
    pub fn to_lq(&self) -> LqProblem {
        let n = self.horizon;
        let g = &self.gradient;
        LqProblem {
            horizon: n,
            nx: self.nx,
            nu: self.nu,
            hessians: self.modified.clone(),
            linear: (0..=n)
                .map(|k| DVector::from_column_slice(g.z.stage(k)))
                .collect(),
            a: self.a.clone(),
            b: self.b.clone(),
            offsets: (0..n)
                .map(|k| -DVector::from_column_slice(g.lambda.stage(k + 1)))
                .collect(),
            initial: -DVector::from_column_slice(g.lambda.stage(0)),
        }
    }

    fn max_block_norm(blocks: &[DMatrix<f64>]) -> f64 {
        blocks.iter().map(|h| h.norm()).fold(0.0, f64::max)
    }
}

/// Default constant for the `H + c G^T G` test: `10 max_k |H_k|_F + 1`.
pub fn default_definiteness_constant(blocks: &[DMatrix<f64>]) -> f64 {
    10.0 * NewtonData::max_block_norm(blocks) + 1.0
}

/// Equality-constrained linear-quadratic dynamic program
///
/// ```text
///   min  sum_{k<L} 1/2 w_k^T H_k w_k + g_k^T w_k + 1/2 p_L^T H_L p_L + g_L^T p_L
///   s.t. p_{k+1} = A_k p_k + B_k q_k + c_{k+1},   p_0 = initial
/// ```
///
/// with `w_k = (p_k, q_k)`. Multipliers follow the same sign convention as the
/// nonlinear problem, so the dual solution of the full-horizon instance is
/// the Newton dual direction.
#[derive(Debug, Clone)]
pub struct LqProblem {
    pub horizon: usize,
    pub nx: usize,
    pub nu: usize,
    pub hessians: Vec<DMatrix<f64>>,
    pub linear: Vec<DVector<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    /// `c_1..c_L`.
    pub offsets: Vec<DVector<f64>>,
    pub initial: DVector<f64>,
}

impl LqProblem {
    fn stride(&self) -> usize {
        2 * self.nx + self.nu
    }

    fn kkt_dim(&self) -> usize {
        self.horizon * self.stride() + 2 * self.nx
    }

    /// Checks `H + c G^T G` for positive definiteness via block Cholesky.
    pub fn reduced_hessian_is_pd(&self, c: f64) -> bool {
        let (n, nx, nu) = (self.horizon, self.nx, self.nu);
        let mut diag = Vec::with_capacity(n + 1);
        let mut off = Vec::with_capacity(n);
        for k in 0..n {
            let mut ab = DMatrix::<f64>::zeros(nx, nx + nu);
            ab.view_mut((0, 0), (nx, nx)).copy_from(&self.a[k]);
            ab.view_mut((0, nx), (nx, nu)).copy_from(&self.b[k]);
            let mut d = &self.hessians[k] + c * ab.tr_mul(&ab);
            for i in 0..nx {
                d[(i, i)] += c;
            }
            diag.push(symmetrize(d));
            let next = if k + 1 < n { nx + nu } else { nx };
            let mut o = DMatrix::<f64>::zeros(nx + nu, next);
            o.view_mut((0, 0), (nx + nu, nx)).copy_from(&(-c * ab.transpose()));
            off.push(o);
        }
        let mut last = self.hessians[n].clone();
        for i in 0..nx {
            last[(i, i)] += c;
        }
        diag.push(symmetrize(last));
        block_tridiagonal_is_pd(&diag, &off, PIVOT_TOL)
    }

    fn assemble_kkt(&self) -> BandMatrix {
        let (n, nx, nu) = (self.horizon, self.nx, self.nu);
        let s = self.stride();
        let mut m = BandMatrix::zeros(self.kkt_dim(), s, s);
        let zeta = |k: usize| k * s;
        let p = |k: usize| k * s + nx;
        let q = |k: usize| k * s + 2 * nx;
        for i in 0..nx {
            m.add(zeta(0) + i, p(0) + i, 1.0);
        }
        for k in 0..=n {
            let h = &self.hessians[k];
            let nz = if k < n { nx + nu } else { nx };
            for r in 0..nz {
                for c in 0..nz {
                    let row = if r < nx { p(k) + r } else { q(k) + r - nx };
                    let col = if c < nx { p(k) + c } else { q(k) + c - nx };
                    m.add(row, col, h[(r, c)]);
                }
            }
            // identity coupling of x_k to lambda_k
            for i in 0..nx {
                m.add(p(k) + i, zeta(k) + i, 1.0);
            }
            if k < n {
                let (a, b) = (&self.a[k], &self.b[k]);
                for i in 0..nx {
                    m.add(zeta(k + 1) + i, p(k + 1) + i, 1.0);
                    for j in 0..nx {
                        m.add(zeta(k + 1) + i, p(k) + j, -a[(i, j)]);
                        m.add(p(k) + j, zeta(k + 1) + i, -a[(i, j)]);
                    }
                    for j in 0..nu {
                        m.add(zeta(k + 1) + i, q(k) + j, -b[(i, j)]);
                        m.add(q(k) + j, zeta(k + 1) + i, -b[(i, j)]);
                    }
                }
            }
        }
        m
    }

    fn assemble_rhs(&self) -> Vec<f64> {
        let (n, nx) = (self.horizon, self.nx);
        let s = self.stride();
        let mut rhs = vec![0.0; self.kkt_dim()];
        for k in 0..=n {
            let c = if k == 0 {
                &self.initial
            } else {
                &self.offsets[k - 1]
            };
            rhs[k * s..k * s + nx].copy_from_slice(c.as_slice());
            let g = &self.linear[k];
            for (i, gi) in g.iter().enumerate() {
                rhs[k * s + nx + i] = -gi;
            }
        }
        rhs
    }

    /// Solves the KKT system. The caller is responsible for certifying the
    /// reduced Hessian first; a singular factorization is reported as an error.
    pub fn solve(&self) -> Result<PrimalDual> {
        let (n, nx, nu) = (self.horizon, self.nx, self.nu);
        let s = self.stride();
        let lu = self.assemble_kkt().factor()?;
        let mut sol = self.assemble_rhs();
        lu.solve_in_place(&mut sol);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolver("non-finite KKT solution".into()));
        }
        let mut w = Trajectory::zeros(n, nx, nu);
        let mut zeta = DualTrajectory::zeros(n, nx);
        for k in 0..=n {
            zeta.stage_mut(k).copy_from_slice(&sol[k * s..k * s + nx]);
            let d = w.stage_dim(k);
            w.stage_mut(k)
                .copy_from_slice(&sol[k * s + nx..k * s + nx + d]);
        }
        // the initial condition is an explicit equation; keep it exact
        w.x_mut(0).copy_from_slice(self.initial.as_slice());
        PrimalDual::new(w, zeta)
    }

    /// Euclidean norm of the KKT residual at `sol`.
    pub fn kkt_residual(&self, sol: &PrimalDual) -> f64 {
        let m = self.assemble_kkt();
        let mut x = vec![0.0; self.kkt_dim()];
        let s = self.stride();
        for k in 0..=self.horizon {
            x[k * s..k * s + self.nx].copy_from_slice(sol.lambda.stage(k));
            let st = sol.z.stage(k);
            x[k * s + self.nx..k * s + self.nx + st.len()].copy_from_slice(st);
        }
        let ax = m.matvec(&x);
        let rhs = self.assemble_rhs();
        ax.iter()
            .zip(&rhs)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Norm of the right-hand side `(g, initial, offsets)`.
    pub fn rhs_norm(&self) -> f64 {
        self.assemble_rhs().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Linearizes the problem at `(z, lambda)`; no modification is applied.
pub fn assemble_newton_data(
    p: &ProblemDef,
    z: &Trajectory,
    lambda: &DualTrajectory,
) -> Result<NewtonData> {
    let gradient = eval_lagrangian_gradient(p, z, lambda)?;
    let n = p.horizon();
    let mut hessian = Vec::with_capacity(n + 1);
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for k in 0..=n {
        hessian.push(symmetrize(lagrangian_hessian_block(p, z, lambda, k)?));
        if k < n {
            let (ak, bk) = p.model().dynamics_jacobians(k, z.x(k), z.u(k));
            a.push(ak);
            b.push(bk);
        }
    }
    NewtonData::from_blocks(hessian, a, b, gradient)
}

/// Tests whether `H_hat + c G^T G` is positive definite, which certifies the
/// reduced Hessian on the null space of the constraint Jacobian.
pub fn check_reduced_hessian(nd: &NewtonData, c: f64) -> bool {
    c > 0.0 && nd.to_lq().reduced_hessian_is_pd(c)
}

/// Levenberg-style modification `H_hat = H_hat + gamma I` with the smallest
/// `gamma` on the ladder `gamma0 * gamma_step^j` that certifies definiteness.
/// Returns the data unchanged when it already passes.
///
/// `c` overrides the definiteness constant; by default it is derived from
/// the blocks under test.
pub fn modify_hessian(nd: &NewtonData, c: Option<f64>, gamma_step: f64) -> Result<NewtonData> {
    if !(gamma_step > 1.0) {
        return invalid("gamma step must exceed 1");
    }
    let constant = |blocks: &[DMatrix<f64>]| c.unwrap_or_else(|| default_definiteness_constant(blocks));
    if check_reduced_hessian(nd, constant(&nd.modified)) {
        return Ok(nd.clone());
    }
    let scale = 1.0 + NewtonData::max_block_norm(&nd.modified);
    let cap = 1e8 * scale;
    let mut gamma = 1e-4 * scale;
    while gamma <= cap {
        let mut trial = nd.clone();
        for h in trial.modified.iter_mut() {
            for i in 0..h.nrows() {
                h[(i, i)] += gamma;
            }
        }
        if check_reduced_hessian(&trial, constant(&trial.modified)) {
            trial.gamma_applied = nd.gamma_applied + gamma;
            return Ok(trial);
        }
        gamma *= gamma_step;
    }
    Err(Error::ModificationFailed { gamma })
}

/// Exact Newton direction from the full-horizon KKT system.
pub fn solve_full_newton(nd: &NewtonData) -> Result<NewtonDirection> {
    nd.to_lq().solve()
}

fn check_theory_args(gamma_c: f64, t: u32, upsilon: f64) -> Result<()> {
    if !(gamma_c > 0.0) {
        return invalid("gamma_C must be positive");
    }
    if t < 1 {
        return invalid("t must be at least 1");
    }
    if !(upsilon > 1.0) {
        return invalid("Upsilon_upper must exceed 1");
    }
    Ok(())
}

/// Lower bound on the eigenvalues of `G G^T` implied by controllability
/// constant `gamma_c` over `t` steps and block bound `upsilon`:
///
/// ```text
/// (gamma_c / (gamma_c + upsilon^(t+1) / (upsilon - 1)))^2 * min(1, gamma_c) / (1 + upsilon)^(2t)
/// ```
pub fn theory_gamma_g(gamma_c: f64, t: u32, upsilon: f64) -> Result<f64> {
    check_theory_args(gamma_c, t, upsilon)?;
    let t = t as i32;
    let ratio = gamma_c / (gamma_c + upsilon.powi(t + 1) / (upsilon - 1.0));
    Ok(ratio * ratio * gamma_c.min(1.0) / (1.0 + upsilon).powi(2 * t))
}

/// Penalty threshold `32 upsilon^(4t+1) / gamma_c` above which every
/// linear-quadratic subproblem has a unique solution.
pub fn theory_mu_bar(gamma_c: f64, t: u32, upsilon: f64) -> Result<f64> {
    check_theory_args(gamma_c, t, upsilon)?;
    Ok(32.0 * upsilon.powi(4 * t as i32 + 1) / gamma_c)
}
