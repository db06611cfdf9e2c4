//! Independent dense oracles shared by the integration tests.
#![allow(dead_code)]

use fotd::newton::LqProblem;
use fotd::{DualTrajectory, PrimalDual, ProblemDef, Trajectory};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn stage_offset(k: usize, nx: usize, nu: usize) -> usize {
    k * (nx + nu)
}

/// Dense constraint Jacobian `G` of an LQ program (natural stage-major order).
pub fn dense_jacobian(lq: &LqProblem) -> DMatrix<f64> {
    let (n, nx, nu) = (lq.horizon, lq.nx, lq.nu);
    let nz = (n + 1) * nx + n * nu;
    let mut g = DMatrix::zeros((n + 1) * nx, nz);
    for i in 0..nx {
        g[(i, i)] = 1.0;
    }
    for k in 0..n {
        let row = (k + 1) * nx;
        let xk = stage_offset(k, nx, nu);
        let xn = stage_offset(k + 1, nx, nu);
        for i in 0..nx {
            g[(row + i, xn + i)] = 1.0;
            for j in 0..nx {
                g[(row + i, xk + j)] = -lq.a[k][(i, j)];
            }
            for j in 0..nu {
                g[(row + i, xk + nx + j)] = -lq.b[k][(i, j)];
            }
        }
    }
    g
}

/// Dense block-diagonal Hessian.
pub fn dense_hessian(lq: &LqProblem) -> DMatrix<f64> {
    let (n, nx, nu) = (lq.horizon, lq.nx, lq.nu);
    let nz = (n + 1) * nx + n * nu;
    let mut h = DMatrix::zeros(nz, nz);
    for k in 0..=n {
        let o = stage_offset(k, nx, nu);
        let d = lq.hessians[k].nrows();
        h.view_mut((o, o), (d, d)).copy_from(&lq.hessians[k]);
    }
    h
}

fn dense_linear(lq: &LqProblem) -> DVector<f64> {
    DVector::from_iterator(
        lq.linear.iter().map(|v| v.len()).sum(),
        lq.linear.iter().flat_map(|v| v.iter().copied()),
    )
}

fn dense_rhs(lq: &LqProblem) -> DVector<f64> {
    DVector::from_iterator(
        (lq.horizon + 1) * lq.nx,
        lq.initial
            .iter()
            .copied()
            .chain(lq.offsets.iter().flat_map(|v| v.iter().copied())),
    )
}

/// Solves `[H G^T; G 0][w; zeta] = [-g; rhs]` with dense LU.
pub fn dense_kkt_solve(lq: &LqProblem) -> PrimalDual {
    let (n, nx, nu) = (lq.horizon, lq.nx, lq.nu);
    let h = dense_hessian(lq);
    let g = dense_jacobian(lq);
    let (nz, nl) = (h.nrows(), g.nrows());
    let mut k = DMatrix::zeros(nz + nl, nz + nl);
    k.view_mut((0, 0), (nz, nz)).copy_from(&h);
    k.view_mut((0, nz), (nz, nl)).copy_from(&g.transpose());
    k.view_mut((nz, 0), (nl, nz)).copy_from(&g);
    let mut rhs = DVector::zeros(nz + nl);
    rhs.rows_mut(0, nz).copy_from(&(-dense_linear(lq)));
    rhs.rows_mut(nz, nl).copy_from(&dense_rhs(lq));
    let sol = k.lu().solve(&rhs).expect("dense KKT matrix is singular");
    PrimalDual::new(
        Trajectory::from_vec(n, nx, nu, sol.rows(0, nz).iter().copied().collect()).unwrap(),
        DualTrajectory::from_vec(n, nx, sol.rows(nz, nl).iter().copied().collect()).unwrap(),
    )
    .unwrap()
}

/// Smallest eigenvalue of `Z^T H Z`, `Z` an orthonormal null-space basis of `G`.
pub fn reduced_hessian_min_eig(lq: &LqProblem) -> f64 {
    let g = dense_jacobian(lq);
    let h = dense_hessian(lq);
    let nz = g.ncols();
    let nl = g.nrows();
    // null space from the eigenvectors of G^T G with zero eigenvalue
    let gtg = g.transpose() * &g;
    let eig = gtg.symmetric_eigen();
    let mut idx: Vec<usize> = (0..nz).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let dim = nz - nl;
    let z = DMatrix::from_fn(nz, dim, |r, c| eig.eigenvectors[(r, idx[c])]);
    let red = z.transpose() * h * z;
    let red = (&red + red.transpose()) * 0.5;
    red.symmetric_eigenvalues().min()
}

pub fn max_abs_diff(a: &PrimalDual, b: &PrimalDual) -> f64 {
    a.sub(b).norm_inf()
}

pub fn rel_diff(a: &PrimalDual, b: &PrimalDual) -> f64 {
    a.sub(b).norm() / b.norm().max(1e-300)
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize, shift: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, d, d, 1.0);
    m.transpose() * m + DMatrix::identity(d, d) * shift
}

/// Random LQ program with positive definite stage Hessians and random
/// offsets and initial condition.
pub fn random_lq(rng: &mut ChaCha8Rng, n: usize, nx: usize, nu: usize) -> LqProblem {
    LqProblem {
        horizon: n,
        nx,
        nu,
        hessians: (0..=n)
            .map(|k| random_spd(rng, if k < n { nx + nu } else { nx }, 0.5))
            .collect(),
        linear: (0..=n)
            .map(|k| DVector::from_fn(if k < n { nx + nu } else { nx }, |_, _| rng.random_range(-1.0..1.0)))
            .collect(),
        a: (0..n).map(|_| random_matrix(rng, nx, nx, 1.0)).collect(),
        b: (0..n).map(|_| random_matrix(rng, nx, nu, 1.0)).collect(),
        offsets: (0..n)
            .map(|_| DVector::from_fn(nx, |_, _| rng.random_range(-1.0..1.0)))
            .collect(),
        initial: DVector::from_fn(nx, |_, _| rng.random_range(-1.0..1.0)),
    }
}

/// Random iterate with `x_0` pinned to the initial state.
pub fn random_iterate(p: &ProblemDef, rng: &mut ChaCha8Rng, scale: f64) -> PrimalDual {
    let mut it = p.zero_iterate();
    for v in it.z.as_mut_slice() {
        *v = rng.random_range(-scale..scale);
    }
    for v in it.lambda.as_mut_slice() {
        *v = rng.random_range(-scale..scale);
    }
    it.z.x_mut(0).copy_from_slice(p.initial_state().as_slice());
    it
}

/// Central differences of a scalar function of a flat vector.
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(1, |b|)` over all components.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
