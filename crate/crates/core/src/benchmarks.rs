//! Benchmark problem generators: the scalar toy program, the thin-plate
//! temperature control problem, a generic linear-quadratic model, and the
//! initialization scheme used by the experiments.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::nldp::{PrimalDual, ProblemDef, StageModel};

/// Reference signal indexed by knot.
pub type KnotReference = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// Reference temperature as a function of interior node index and time.
pub type FieldReference = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// Scalar toy program
///
/// ```text
///   g_k = 2 cos^2(x_k - d_k) + C1 (x_k - d_k)^2 - C2 (u_k - d_k)^2
///   g_N = C1 x_N^2
///   x_{k+1} = x_k + u_k + d_k,   x_0 = 0
/// ```
#[derive(Clone)]
pub struct ToySpec {
    pub horizon: usize,
    pub c1: f64,
    pub c2: f64,
    pub reference: KnotReference,
}

impl fmt::Debug for ToySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToySpec")
            .field("horizon", &self.horizon)
            .field("c1", &self.c1)
            .field("c2", &self.c2)
            .finish_non_exhaustive()
    }
}

impl ToySpec {
    pub fn new(horizon: usize, c1: f64, c2: f64, reference: KnotReference) -> Self {
        ToySpec {
            horizon,
            c1,
            c2,
            reference,
        }
    }

    /// Constant reference `d_k = d`.
    pub fn constant(horizon: usize, c1: f64, c2: f64, d: f64) -> Self {
        Self::new(horizon, c1, c2, Arc::new(move |_| d))
    }

    /// Whether `C1 - 2 > 4 |C2|`, the margin that keeps the reduced Hessian
    /// positive definite everywhere.
    pub fn has_convexity_margin(&self) -> bool {
        self.c1 - 2.0 > 4.0 * self.c2.abs()
    }

    /// Lower bound `(C1 - 2 - 4|C2|) / 4` on the reduced Hessian spectrum.
    pub fn reduced_hessian_bound(&self) -> f64 {
        (self.c1 - 2.0 - 4.0 * self.c2.abs()) / 4.0
    }
}

/// The three toy configurations of the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyCase {
    One,
    Two,
    Three,
}

impl ToyCase {
    pub fn from_index(i: u8) -> Option<Self> {
        match i {
            1 => Some(ToyCase::One),
            2 => Some(ToyCase::Two),
            3 => Some(ToyCase::Three),
            _ => None,
        }
    }

    pub fn index(self) -> u8 {
        match self {
            ToyCase::One => 1,
            ToyCase::Two => 2,
            ToyCase::Three => 3,
        }
    }

    /// Full-scale horizon.
    pub fn reference_horizon(self) -> usize {
        match self {
            ToyCase::One | ToyCase::Two => 5000,
            ToyCase::Three => 10000,
        }
    }

    /// Full-scale number of subproblems.
    pub fn reference_subproblems(self) -> usize {
        match self {
            ToyCase::One => 50,
            ToyCase::Two | ToyCase::Three => 100,
        }
    }

    /// The case's cost constants and reference on the given horizon.
    pub fn spec(self, horizon: usize) -> ToySpec {
        match self {
            ToyCase::One => ToySpec::constant(horizon, 8.0, 1.0, 1.0),
            ToyCase::Two => ToySpec::new(
                horizon,
                15.0,
                3.0,
                Arc::new(|k| 100.0 * (k as f64).sin().powi(2)),
            ),
            ToyCase::Three => {
                ToySpec::new(horizon, 12.0, 2.0, Arc::new(|k| 5.0 * (k as f64).sin()))
            }
        }
    }
}

struct ToyModel {
    c1: f64,
    c2: f64,
    reference: KnotReference,
}

impl StageModel for ToyModel {
    fn stage_cost(&self, k: usize, x: &[f64], u: &[f64]) -> f64 {
        let d = (self.reference)(k);
        let (e, v) = (x[0] - d, u[0] - d);
        2.0 * e.cos().powi(2) + self.c1 * e * e - self.c2 * v * v
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.c1 * x[0] * x[0]
    }

    fn stage_cost_gradient(&self, k: usize, x: &[f64], u: &[f64]) -> DVector<f64> {
        let d = (self.reference)(k);
        let (e, v) = (x[0] - d, u[0] - d);
        DVector::from_vec(vec![
            -2.0 * (2.0 * e).sin() + 2.0 * self.c1 * e,
            -2.0 * self.c2 * v,
        ])
    }

    fn terminal_cost_gradient(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_element(1, 2.0 * self.c1 * x[0])
    }

    fn stage_cost_hessian(&self, k: usize, x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        let e = x[0] - (self.reference)(k);
        DMatrix::from_row_slice(
            2,
            2,
            &[2.0 * self.c1 - 4.0 * (2.0 * e).cos(), 0.0, 0.0, -2.0 * self.c2],
        )
    }

    fn terminal_cost_hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 2.0 * self.c1)
    }

    fn dynamics(&self, k: usize, x: &[f64], u: &[f64]) -> DVector<f64> {
        DVector::from_element(1, x[0] + u[0] + (self.reference)(k))
    }

    fn dynamics_jacobians(&self, _k: usize, _x: &[f64], _u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::identity(1, 1), DMatrix::identity(1, 1))
    }

    fn dynamics_hessian_contraction(
        &self,
        _k: usize,
        _x: &[f64],
        _u: &[f64],
        _lambda_next: &[f64],
    ) -> DMatrix<f64> {
        DMatrix::zeros(2, 2)
    }
}

/// Builds the toy program. A missing convexity margin is recorded as a
/// warning on the problem rather than rejected.
pub fn make_toy_problem(spec: &ToySpec) -> Result<ProblemDef> {
    if spec.horizon < 2 {
        return invalid("toy problem needs a horizon of at least 2");
    }
    if !spec.c1.is_finite() || !spec.c2.is_finite() {
        return invalid("toy constants must be finite");
    }
    let model = ToyModel {
        c1: spec.c1,
        c2: spec.c2,
        reference: spec.reference.clone(),
    };
    let p = ProblemDef::new(spec.horizon, 1, 1, DVector::zeros(1), Arc::new(model))?;
    Ok(if spec.has_convexity_margin() {
        p
    } else {
        p.with_warning(format!(
            "C1 - 2 <= 4|C2| (C1={}, C2={}): Hessian modification may be needed",
            spec.c1, spec.c2
        ))
    })
}

/// Thin-plate temperature control on an `m x m` mesh with Dirichlet zero
/// boundary, discretized by the 5-point Laplacian and explicit Euler.
#[derive(Clone)]
pub struct PlateSpec {
    pub mesh: usize,
    pub horizon: usize,
    pub h_c: f64,
    pub kappa_c: f64,
    pub epsilon_c: f64,
    pub sigma_c: f64,
    pub t_ambient: f64,
    pub thickness: f64,
    pub reference: FieldReference,
}

impl fmt::Debug for PlateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlateSpec")
            .field("mesh", &self.mesh)
            .field("horizon", &self.horizon)
            .field("h_c", &self.h_c)
            .field("kappa_c", &self.kappa_c)
            .field("epsilon_c", &self.epsilon_c)
            .field("sigma_c", &self.sigma_c)
            .field("t_ambient", &self.t_ambient)
            .field("thickness", &self.thickness)
            .finish_non_exhaustive()
    }
}

impl PlateSpec {
    /// Experiment constants with reference `d(w, t) = sin(t)`.
    pub fn new(mesh: usize, horizon: usize) -> Self {
        PlateSpec {
            mesh,
            horizon,
            h_c: 1.0,
            kappa_c: 400.0,
            epsilon_c: 0.5,
            sigma_c: 5.67e-8,
            t_ambient: 300.0,
            thickness: 0.01,
            reference: Arc::new(|_, t| t.sin()),
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.horizon as f64
    }

    pub fn dw(&self) -> f64 {
        1.0 / (self.mesh as f64 - 1.0)
    }

    /// Number of interior nodes, the state and control dimension.
    pub fn interior(&self) -> usize {
        (self.mesh - 2) * (self.mesh - 2)
    }

    pub fn convection(&self) -> f64 {
        2.0 * self.h_c / (self.kappa_c * self.thickness)
    }

    pub fn radiation(&self) -> f64 {
        2.0 * self.epsilon_c * self.sigma_c / (self.kappa_c * self.thickness)
    }

    /// `dt * 4 / dw^2`; explicit Euler is unstable once this reaches 2.
    pub fn stability_number(&self) -> f64 {
        self.dt() * 4.0 / (self.dw() * self.dw())
    }
}

struct PlateModel {
    side: usize,
    dt: f64,
    weight: f64,
    laplacian: DMatrix<f64>,
    convection: f64,
    radiation: f64,
    t_ambient: f64,
    reference: FieldReference,
}

impl PlateModel {
    fn target(&self, k: usize, node: usize) -> f64 {
        (self.reference)(node, k as f64 * self.dt)
    }

    fn n(&self) -> usize {
        self.side * self.side
    }
}

impl StageModel for PlateModel {
    fn stage_cost(&self, k: usize, x: &[f64], u: &[f64]) -> f64 {
        let s: f64 = (0..self.n())
            .map(|j| (x[j] - self.target(k, j)).powi(2) + u[j] * u[j])
            .sum();
        self.weight * s
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        let k = ((1.0 / self.dt).round()) as usize;
        let s: f64 = (0..self.n()).map(|j| (x[j] - self.target(k, j)).powi(2)).sum();
        self.weight * s
    }

    fn stage_cost_gradient(&self, k: usize, x: &[f64], u: &[f64]) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(2 * n, |i, _| {
            if i < n {
                2.0 * self.weight * (x[i] - self.target(k, i))
            } else {
                2.0 * self.weight * u[i - n]
            }
        })
    }

    fn terminal_cost_gradient(&self, x: &[f64]) -> DVector<f64> {
        let k = ((1.0 / self.dt).round()) as usize;
        DVector::from_fn(self.n(), |i, _| 2.0 * self.weight * (x[i] - self.target(k, i)))
    }

    fn stage_cost_hessian(&self, _k: usize, _x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(2 * self.n(), 2 * self.n()) * (2.0 * self.weight)
    }

    fn terminal_cost_hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.n(), self.n()) * (2.0 * self.weight)
    }

    fn dynamics(&self, _k: usize, x: &[f64], u: &[f64]) -> DVector<f64> {
        let xv = DVector::from_column_slice(x);
        let lap = &self.laplacian * &xv;
        let t4 = self.t_ambient.powi(4);
        DVector::from_fn(self.n(), |j, _| {
            let rate = lap[j]
                + u[j]
                + self.convection * (self.t_ambient - x[j])
                + self.radiation * (t4 - x[j].powi(4));
            x[j] + self.dt * rate
        })
    }

    fn dynamics_jacobians(&self, _k: usize, x: &[f64], _u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n();
        let mut a = &self.laplacian * self.dt;
        for j in 0..n {
            a[(j, j)] += 1.0 - self.dt * (self.convection + 4.0 * self.radiation * x[j].powi(3));
        }
        (a, DMatrix::identity(n, n) * self.dt)
    }

    fn dynamics_hessian_contraction(
        &self,
        _k: usize,
        x: &[f64],
        _u: &[f64],
        lambda_next: &[f64],
    ) -> DMatrix<f64> {
        let n = self.n();
        let mut h = DMatrix::zeros(2 * n, 2 * n);
        for j in 0..n {
            h[(j, j)] = 12.0 * self.dt * self.radiation * lambda_next[j] * x[j] * x[j];
        }
        h
    }
}

fn plate_laplacian(side: usize, dw: f64) -> DMatrix<f64> {
    let n = side * side;
    let scale = 1.0 / (dw * dw);
    let mut l = DMatrix::zeros(n, n);
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            l[(i, i)] = -4.0 * scale;
            if r > 0 {
                l[(i, i - side)] = scale;
            }
            if r + 1 < side {
                l[(i, i + side)] = scale;
            }
            if c > 0 {
                l[(i, i - 1)] = scale;
            }
            if c + 1 < side {
                l[(i, i + 1)] = scale;
            }
        }
    }
    l
}

/// Builds the thin-plate problem. An explicit-Euler stability violation is
/// attached as a warning.
pub fn make_plate_problem(spec: &PlateSpec) -> Result<ProblemDef> {
    if spec.mesh < 3 {
        return invalid("plate mesh must be at least 3x3");
    }
    if spec.horizon == 0 {
        return invalid("plate horizon must be positive");
    }
    let nonneg = [spec.h_c, spec.epsilon_c, spec.sigma_c, spec.t_ambient];
    if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0))
        || !(spec.kappa_c > 0.0 && spec.thickness > 0.0)
    {
        return invalid("plate constants must be finite and nonnegative, kappa_c and t_c positive");
    }
    let side = spec.mesh - 2;
    let n = side * side;
    let (dt, dw) = (spec.dt(), spec.dw());
    let model = PlateModel {
        side,
        dt,
        weight: dt * dw * dw,
        laplacian: plate_laplacian(side, dw),
        convection: spec.convection(),
        radiation: spec.radiation(),
        t_ambient: spec.t_ambient,
        reference: spec.reference.clone(),
    };
    let p = ProblemDef::new(spec.horizon, n, n, DVector::zeros(n), Arc::new(model))?;
    let stab = spec.stability_number();
    Ok(if stab >= 2.0 {
        p.with_warning(format!(
            "explicit Euler unstable: dt*4/dw^2 = {stab:.6} >= 2"
        ))
    } else {
        p
    })
}

/// Linear-quadratic program with stage costs `1/2 z_k^T H_k z_k + g_k^T z_k`
/// and affine dynamics `x_{k+1} = A_k x_k + B_k u_k + c_k`.
#[derive(Debug, Clone)]
pub struct LinearQuadratic {
    /// `N + 1` blocks; the last is the terminal `nx x nx` block.
    pub hessians: Vec<DMatrix<f64>>,
    pub linear: Vec<DVector<f64>>,
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
    pub offsets: Vec<DVector<f64>>,
}

impl LinearQuadratic {
    pub fn into_problem(self, initial_state: DVector<f64>) -> Result<ProblemDef> {
        let n = self.a.len();
        if n == 0
            || self.b.len() != n
            || self.offsets.len() != n
            || self.hessians.len() != n + 1
            || self.linear.len() != n + 1
        {
            return invalid("linear-quadratic data has inconsistent block counts");
        }
        let (nx, nu) = (self.a[0].nrows(), self.b[0].ncols());
        for k in 0..n {
            if self.a[k].shape() != (nx, nx)
                || self.b[k].shape() != (nx, nu)
                || self.offsets[k].len() != nx
                || self.hessians[k].shape() != (nx + nu, nx + nu)
                || self.linear[k].len() != nx + nu
            {
                return invalid(format!("linear-quadratic block {k} has wrong shape"));
            }
        }
        if self.hessians[n].shape() != (nx, nx) || self.linear[n].len() != nx {
            return invalid("terminal block has wrong shape");
        }
        ProblemDef::new(n, nx, nu, initial_state, Arc::new(self))
    }

    fn stage_vec(x: &[f64], u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(x.len() + u.len(), x.iter().chain(u).copied())
    }
}

impl StageModel for LinearQuadratic {
    fn stage_cost(&self, k: usize, x: &[f64], u: &[f64]) -> f64 {
        let z = Self::stage_vec(x, u);
        0.5 * z.dot(&(&self.hessians[k] * &z)) + self.linear[k].dot(&z)
    }

    fn terminal_cost(&self, x: &[f64]) -> f64 {
        let n = self.a.len();
        let z = DVector::from_column_slice(x);
        0.5 * z.dot(&(&self.hessians[n] * &z)) + self.linear[n].dot(&z)
    }

    fn stage_cost_gradient(&self, k: usize, x: &[f64], u: &[f64]) -> DVector<f64> {
        &self.hessians[k] * Self::stage_vec(x, u) + &self.linear[k]
    }

    fn terminal_cost_gradient(&self, x: &[f64]) -> DVector<f64> {
        let n = self.a.len();
        &self.hessians[n] * DVector::from_column_slice(x) + &self.linear[n]
    }

    fn stage_cost_hessian(&self, k: usize, _x: &[f64], _u: &[f64]) -> DMatrix<f64> {
        self.hessians[k].clone()
    }

    fn terminal_cost_hessian(&self, _x: &[f64]) -> DMatrix<f64> {
        self.hessians[self.a.len()].clone()
    }

    fn dynamics(&self, k: usize, x: &[f64], u: &[f64]) -> DVector<f64> {
        &self.a[k] * DVector::from_column_slice(x)
            + &self.b[k] * DVector::from_column_slice(u)
            + &self.offsets[k]
    }

    fn dynamics_jacobians(&self, k: usize, _x: &[f64], _u: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a[k].clone(), self.b[k].clone())
    }

    fn dynamics_hessian_contraction(
        &self,
        _k: usize,
        x: &[f64],
        u: &[f64],
        _lambda_next: &[f64],
    ) -> DMatrix<f64> {
        let d = x.len() + u.len();
        DMatrix::zeros(d, d)
    }
}

/// Half-width of the uniform distribution used for random initializations.
pub const INIT_RANGE: f64 = 1e5;

/// `count` starting points: the first is all zeros, the rest draw every
/// coordinate iid from `Uniform(-1e5, 1e5)`. In all of them `x_0` is reset to
/// the initial state.
pub fn make_initializations(p: &ProblemDef, count: usize, seed: u64) -> Vec<PrimalDual> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let mut it = p.zero_iterate();
            if i > 0 {
                for v in it.z.as_mut_slice() {
                    *v = rng.random_range(-INIT_RANGE..=INIT_RANGE);
                }
                for v in it.lambda.as_mut_slice() {
                    *v = rng.random_range(-INIT_RANGE..=INIT_RANGE);
                }
            }
            it.z.x_mut(0).copy_from_slice(p.initial_state().as_slice());
            it
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nldp::{eval_constraints, eval_objective, Trajectory};

    #[test]
    fn table_cases() {
        let c1 = ToyCase::One.spec(10);
        assert_eq!((c1.c1, c1.c2, (c1.reference)(7)), (8.0, 1.0, 1.0));
        let c2 = ToyCase::Two.spec(10);
        assert_eq!((c2.c1, c2.c2), (15.0, 3.0));
        assert!(((c2.reference)(3) - 100.0 * 3f64.sin().powi(2)).abs() < 1e-12);
        let c3 = ToyCase::Three.spec(10);
        assert_eq!((c3.c1, c3.c2), (12.0, 2.0));
        assert!(((c3.reference)(2) - 5.0 * 2f64.sin()).abs() < 1e-12);
        assert_eq!(
            [ToyCase::One, ToyCase::Two, ToyCase::Three].map(|c| (c.reference_horizon(), c.reference_subproblems())),
            [(5000, 50), (5000, 100), (10000, 100)]
        );
    }

    #[test]
    fn convexity_margin_warning() {
        assert!(make_toy_problem(&ToySpec::constant(4, 8.0, 1.0, 1.0))
            .unwrap()
            .warnings()
            .is_empty());
        let p = make_toy_problem(&ToySpec::constant(4, 3.0, 1.0, 1.0)).unwrap();
        assert_eq!(p.warnings().len(), 1);
        assert!(make_toy_problem(&ToySpec::constant(1, 8.0, 1.0, 1.0)).is_err());
    }

    #[test]
    fn toy_hessian_at_zero() {
        let p = make_toy_problem(&ToySpec::constant(3, 8.0, 1.0, 0.0)).unwrap();
        let h = p.model().stage_cost_hessian(0, &[0.0], &[0.0]);
        assert_eq!(h[(0, 0)], 12.0);
        assert_eq!(h[(1, 1)], -2.0);
    }

    #[test]
    fn plate_dimensions_and_constants() {
        let spec = PlateSpec::new(4, 500);
        let p = make_plate_problem(&spec).unwrap();
        assert_eq!((p.nx(), p.nu()), (4, 4));
        assert!((spec.convection() - 0.5).abs() < 1e-15);
        assert!((spec.radiation() - 1.4175e-8).abs() < 1e-20);
        assert!(p.warnings().is_empty());
        let unstable = make_plate_problem(&PlateSpec::new(6, 10)).unwrap();
        assert_eq!(unstable.warnings().len(), 1);
        assert!(make_plate_problem(&PlateSpec::new(2, 10)).is_err());
    }

    #[test]
    fn plate_ambient_equilibrium() {
        // a spatially constant ambient field with no diffusion is a fixed point
        let mut spec = PlateSpec::new(3, 50);
        spec.t_ambient = 2.0;
        let p = make_plate_problem(&spec).unwrap();
        let x = [2.0];
        let lap_free = p.model().dynamics(0, &x, &[0.0])[0] - spec.dt() * (-4.0 / spec.dw().powi(2)) * 2.0;
        assert!((lap_free - 2.0).abs() < 1e-12);
    }

    #[test]
    fn plate_without_exchange_is_optimal_at_zero() {
        let mut spec = PlateSpec::new(4, 20);
        spec.h_c = 0.0;
        spec.epsilon_c = 0.0;
        spec.reference = Arc::new(|_, _| 0.0);
        let p = make_plate_problem(&spec).unwrap();
        let z = Trajectory::zeros(20, 4, 4);
        assert_eq!(eval_objective(&p, &z).unwrap(), 0.0);
        assert!(eval_constraints(&p, &z).unwrap().as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn initializations_are_reproducible() {
        let p = make_toy_problem(&ToySpec::constant(10, 8.0, 1.0, 1.0)).unwrap();
        let a = make_initializations(&p, 5, 42);
        let b = make_initializations(&p, 5, 42);
        assert_eq!(a, b);
        assert_eq!(a[0], p.zero_iterate());
        for it in &a[1..] {
            assert_eq!(it.z.x(0), &[0.0]);
            assert!(it.norm_inf() <= INIT_RANGE);
            assert!(it.norm_inf() > 1.0);
        }
        assert_ne!(make_initializations(&p, 2, 7)[1], a[1]);
    }
}
