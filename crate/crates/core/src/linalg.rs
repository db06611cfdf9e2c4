//! Banded LU with partial pivoting and a block-tridiagonal Cholesky test.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
///
/// Each row stores columns `i - kl ..= i + ku + kl`; the extra `kl` columns
/// hold fill produced by row interchanges during factorization.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.ku + self.kl);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.ku {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)`; panics if the entry lies outside the band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band (kl={}, ku={})",
            self.kl,
            self.ku
        );
        let id = self.idx(i, j);
        self.data[id] += v;
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `y = A x` using the unfactored matrix.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.data[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU factorization with partial pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let scale = self.max_abs().max(f64::MIN_POSITIVE);
        let tol = scale * 1e-14;
        let mut perm = vec![0usize; n];
        let reach = self.ku + self.kl;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= tol {
                return Err(Error::LinearSolver(format!(
                    "singular KKT matrix: pivot {best:e} at column {k}"
                )));
            }
            perm[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                for j in k + 1..=last_col {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(BandLu { lu: self, perm })
    }
}

/// Factored band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    lu: BandMatrix,
    perm: Vec<usize>,
}

impl BandLu {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let m = &self.lu;
        let n = m.n;
        let reach = m.ku + m.kl;
        for k in 0..n {
            let p = self.perm[k];
            if p != k {
                rhs.swap(k, p);
            }
            let bk = rhs[k];
            if bk != 0.0 {
                for i in k + 1..=(k + m.kl).min(n - 1) {
                    rhs[i] -= m.data[m.idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = rhs[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= m.data[m.idx(k, j)] * rhs[j];
            }
            rhs[k] = s / m.data[m.idx(k, k)];
        }
    }
}

/// Dense Cholesky of a small symmetric block. Returns `None` when a pivot
/// falls below `pivot_tol`.
pub fn cholesky_with_tol(a: &DMatrix<f64>, pivot_tol: f64) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d >= pivot_tol) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Checks positive definiteness of a symmetric block-tridiagonal matrix with
/// diagonal blocks `diag[k]` and off-diagonal blocks `off[k]` coupling block
/// `k` (rows) to block `k + 1` (columns). Every Cholesky pivot must be at
/// least `pivot_tol`.
pub fn block_tridiagonal_is_pd(diag: &[DMatrix<f64>], off: &[DMatrix<f64>], pivot_tol: f64) -> bool {
    debug_assert_eq!(off.len() + 1, diag.len());
    // carry = W^T W where W = L_{k-1}^{-1} off[k-1]
    let mut carry: Option<DMatrix<f64>> = None;
    for (k, d) in diag.iter().enumerate() {
        let s = match carry.take() {
            Some(c) => d - c,
            None => d.clone(),
        };
        let l = match cholesky_with_tol(&s, pivot_tol) {
            Some(l) => l,
            None => return false,
        };
        if k < off.len() {
            let w = match l.solve_lower_triangular(&off[k]) {
                Some(w) => w,
                None => return false,
            };
            carry = Some(w.tr_mul(&w));
        }
    }
    true
}
