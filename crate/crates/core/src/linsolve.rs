//! Sparse complex linear solves: direct LU (faer) for systems up to
//! [`SolverOptions::direct_limit`] unknowns, restarted GMRES with an ILU(0)
//! preconditioner beyond.

use std::sync::OnceLock;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use faer::MatMut;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::{CscMatrix, C64, ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Auto,
    Direct,
    Gmres,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub kind: SolverKind,
    /// `Auto` switches to GMRES above this many unknowns.
    pub direct_limit: usize,
    pub gmres_restart: usize,
    pub gmres_max_iter: usize,
    /// Relative residual target for GMRES.
    pub gmres_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            kind: SolverKind::Auto,
            direct_limit: 400_000,
            gmres_restart: 60,
            gmres_max_iter: 5_000,
            gmres_tol: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn use_direct(&self, n: usize) -> bool {
        match self.kind {
            SolverKind::Direct => true,
            SolverKind::Gmres => false,
            SolverKind::Auto => n <= self.direct_limit,
        }
    }
}

/// Factorizes `a` and solves `a x = b`.
pub fn solve_direct(a: &CscMatrix, b: &[C64]) -> Result<Vec<C64>> {
    let sym = SymbolicLu::try_new(a.as_faer().symbolic())
        .map_err(|e| Error::LinearSolve(format!("symbolic LU: {e:?}")))?;
    let lu = Lu::try_new_with_symbolic(sym, a.as_faer())
        .map_err(|e| Error::LinearSolve(format!("numeric LU: {e:?}")))?;
    lu_solve(&lu, b)
}

fn lu_solve(lu: &Lu<usize, C64>, b: &[C64]) -> Result<Vec<C64>> {
    let mut x = b.to_vec();
    let n = x.len();
    lu.solve_in_place(MatMut::from_column_major_slice_mut(&mut x, n, 1));
    if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::LinearSolve(
            "singular matrix (non-finite solution)".into(),
        ));
    }
    Ok(x)
}

/// Iterative solve of `a x = b` with GMRES(restart), right-preconditioned by
/// `precond` (or by ILU(0) of `a` when `None`). `x0` is a warm start.
pub fn solve_gmres(
    a: &CscMatrix,
    b: &[C64],
    x0: Option<&[C64]>,
    precond: Option<&Ilu0>,
    opts: &SolverOptions,
) -> Result<Vec<C64>> {
    let owned;
    let m = match precond {
        Some(p) => p,
        None => {
            owned = Ilu0::new(a)?;
            &owned
        }
    };
    gmres(
        a,
        b,
        x0,
        m,
        opts.gmres_restart,
        opts.gmres_max_iter,
        opts.gmres_tol,
    )
}

pub fn solve(a: &CscMatrix, b: &[C64], opts: &SolverOptions) -> Result<Vec<C64>> {
    if opts.use_direct(a.nrows()) {
        solve_direct(a, b)
    } else {
        solve_gmres(a, b, None, None, opts)
    }
}

fn norm2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn gmres(
    a: &CscMatrix,
    b: &[C64],
    x0: Option<&[C64]>,
    m: &Ilu0,
    restart: usize,
    max_iter: usize,
    tol: f64,
) -> Result<Vec<C64>> {
    let n = b.len();
    let bnorm = norm2(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![ZERO; n]);
    if bnorm == 0.0 {
        return Ok(vec![ZERO; n]);
    }
    let restart = restart.max(1).min(n.max(1));
    let mut r = vec![ZERO; n];
    let mut w = vec![ZERO; n];
    let mut z = vec![ZERO; n];
    let mut total = 0usize;
    loop {
        a.matvec(&x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let beta = norm2(&r);
        if beta <= tol * bnorm {
            return Ok(x);
        }
        if total >= max_iter {
            return Err(Error::NonConvergence(format!(
                "GMRES: relative residual {:.3e} after {total} iterations",
                beta / bnorm
            )));
        }
        let mut v: Vec<Vec<C64>> = Vec::with_capacity(restart + 1);
        v.push(r.iter().map(|ri| ri / beta).collect());
        let mut h = vec![vec![ZERO; restart]; restart + 1];
        let mut cs = vec![ZERO; restart];
        let mut sn = vec![ZERO; restart];
        let mut g = vec![ZERO; restart + 1];
        g[0] = C64::new(beta, 0.0);
        let mut k_used = 0;
        for k in 0..restart {
            total += 1;
            z.copy_from_slice(&v[k]);
            m.apply(&mut z);
            a.matvec(&z, &mut w);
            // modified Gram–Schmidt
            for (i, vi) in v.iter().enumerate() {
                let hik = dot(vi, &w);
                h[i][k] = hik;
                w.iter_mut().zip(vi).for_each(|(wj, vj)| *wj -= hik * vj);
            }
            let hnext = norm2(&w);
            h[k + 1][k] = C64::new(hnext, 0.0);
            // apply previous rotations
            for i in 0..k {
                let t = cs[i].conj() * h[i][k] + sn[i].conj() * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let (hk, hk1) = (h[k][k], h[k + 1][k]);
            let denom = (hk.norm_sqr() + hk1.norm_sqr()).sqrt();
            if denom == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = hk / denom;
            sn[k] = hk1 / denom;
            h[k][k] = C64::new(denom, 0.0);
            h[k + 1][k] = ZERO;
            g[k + 1] = -sn[k] * g[k];
            g[k] = cs[k].conj() * g[k];
            k_used = k + 1;
            if g[k + 1].norm() <= tol * bnorm || hnext == 0.0 {
                break;
            }
            v.push(w.iter().map(|wj| wj / hnext).collect());
            if total >= max_iter {
                break;
            }
        }
        // back substitution
        let mut y = vec![ZERO; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= h[i][j] * y[j];
            }
            y[i] = s / h[i][i];
        }
        z.iter_mut().for_each(|zi| *zi = ZERO);
        for (yi, vi) in y.iter().zip(&v) {
            z.iter_mut().zip(vi).for_each(|(zj, vj)| *zj += yi * vj);
        }
        m.apply(&mut z);
        x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += zi);
    }
}

/// Zero-fill incomplete LU factorization, stored row-wise.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<C64>,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CscMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension("ILU(0) of a non-square matrix".into()));
        }
        let n = a.nrows();
        // CSR of a, with every diagonal position present
        let (padded, _) = a.with_full_diagonal();
        let t = padded.transpose_keep_zeros();
        let row_ptr = t.col_ptr().to_vec();
        let col_idx = t.row_idx().to_vec();
        let mut vals = t.values().to_vec();
        let mut diag = vec![0usize; n];
        for i in 0..n {
            diag[i] = (row_ptr[i]..row_ptr[i + 1])
                .find(|&p| col_idx[p] == i)
                .expect("padded diagonal");
        }
        let scale = a.max_abs().max(f64::MIN_POSITIVE);
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            for p in row_ptr[i]..row_ptr[i + 1] {
                pos[col_idx[p]] = p;
            }
            for p in row_ptr[i]..diag[i] {
                let k = col_idx[p];
                let mut pivot = vals[diag[k]];
                if pivot.norm() < 1e-14 * scale {
                    pivot = C64::new(1e-14 * scale, 0.0);
                }
                let lik = vals[p] / pivot;
                vals[p] = lik;
                for q in diag[k] + 1..row_ptr[k + 1] {
                    let j = col_idx[q];
                    let pj = pos[j];
                    if pj != usize::MAX {
                        let vq = vals[q];
                        vals[pj] -= lik * vq;
                    }
                }
            }
            for p in row_ptr[i]..row_ptr[i + 1] {
                pos[col_idx[p]] = usize::MAX;
            }
            if vals[diag[i]].norm() < 1e-14 * scale {
                vals[diag[i]] = C64::new(1e-14 * scale, 0.0);
            }
        }
        Ok(Self {
            n,
            row_ptr,
            col_idx,
            vals,
            diag,
        })
    }

    /// `x ← (LU)⁻¹ x`.
    pub fn apply(&self, x: &mut [C64]) {
        debug_assert_eq!(x.len(), self.n);
        for i in 0..self.n {
            let mut s = x[i];
            for p in self.row_ptr[i]..self.diag[i] {
                s -= self.vals[p] * x[self.col_idx[p]];
            }
            x[i] = s;
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for p in self.diag[i] + 1..self.row_ptr[i + 1] {
                s -= self.vals[p] * x[self.col_idx[p]];
            }
            x[i] = s / self.vals[self.diag[i]];
        }
    }
}

/// `z I − A` for a fixed `A`, re-solved for many shifts `z`. The sparsity
/// pattern (with the full diagonal) is fixed, so the symbolic LU analysis is
/// done once and shared.
pub struct ShiftedSystem {
    base: CscMatrix,
    diag_pos: Vec<usize>,
    symbolic: OnceLock<std::result::Result<SymbolicLu<usize>, String>>,
}

impl ShiftedSystem {
    pub fn new(a: &CscMatrix) -> Self {
        let (neg, diag_pos) = a.scale(C64::new(-1.0, 0.0)).with_full_diagonal();
        Self {
            base: neg,
            diag_pos,
            symbolic: OnceLock::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn matrix_at(&self, z: C64) -> CscMatrix {
        let mut m = self.base.clone();
        let vals = m.values_mut();
        for &p in &self.diag_pos {
            vals[p] += z;
        }
        m
    }

    fn symbolic(&self) -> Result<&SymbolicLu<usize>> {
        self.symbolic
            .get_or_init(|| {
                SymbolicLu::try_new(self.base.as_faer().symbolic()).map_err(|e| format!("{e:?}"))
            })
            .as_ref()
            .map_err(|e| Error::LinearSolve(format!("symbolic LU: {e}")))
    }

    /// Direct solve of `(z I − A) x = b`.
    pub fn solve_direct(&self, z: C64, b: &[C64]) -> Result<Vec<C64>> {
        let m = self.matrix_at(z);
        let lu = Lu::try_new_with_symbolic(self.symbolic()?.clone(), m.as_faer())
            .map_err(|e| Error::LinearSolve(format!("numeric LU at shift {z}: {e:?}")))?;
        lu_solve(&lu, b)
    }

    pub fn preconditioner(&self, z: C64) -> Result<Ilu0> {
        Ilu0::new(&self.matrix_at(z))
    }

    /// GMRES solve of `(z I − A) x = b` preconditioned by an ILU(0) built at a
    /// (possibly different) nearby shift.
    pub fn solve_iterative(
        &self,
        z: C64,
        b: &[C64],
        x0: Option<&[C64]>,
        precond: &Ilu0,
        opts: &SolverOptions,
    ) -> Result<Vec<C64>> {
        let m = self.matrix_at(z);
        solve_gmres(&m, b, x0, Some(precond), opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(n: usize) -> CscMatrix {
        // diagonally dominant, non-Hermitian, banded
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((i, i, C64::new(4.0 + i as f64 * 0.01, 1.0)));
            if i + 1 < n {
                trips.push((i, i + 1, C64::new(-1.0, 0.3)));
                trips.push((i + 1, i, C64::new(-0.7, -0.2)));
            }
            if i + 5 < n {
                trips.push((i + 5, i, C64::new(0.2, 0.1)));
            }
        }
        CscMatrix::from_triplets(n, n, trips).unwrap()
    }

    fn residual(a: &CscMatrix, x: &[C64], b: &[C64]) -> f64 {
        let mut r = vec![ZERO; b.len()];
        a.matvec(x, &mut r);
        r.iter()
            .zip(b)
            .map(|(ri, bi)| (ri - bi).norm_sqr())
            .sum::<f64>()
            .sqrt()
            / norm2(b)
    }

    #[test]
    fn direct_and_gmres_agree() {
        let a = test_matrix(200);
        let b: Vec<C64> = (0..200)
            .map(|i| C64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let xd = solve_direct(&a, &b).unwrap();
        let xg = solve_gmres(&a, &b, None, None, &SolverOptions::default()).unwrap();
        assert!(residual(&a, &xd, &b) < 1e-13);
        assert!(residual(&a, &xg, &b) < 1e-11);
        let diff: f64 = xd
            .iter()
            .zip(&xg)
            .map(|(p, q)| (p - q).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10);
    }

    #[test]
    fn shifted_system_reuses_structure() {
        let a = test_matrix(50);
        let sys = ShiftedSystem::new(&a);
        let b: Vec<C64> = (0..50).map(|i| C64::new(1.0, i as f64)).collect();
        for z in [C64::new(0.0, 0.5), C64::new(0.0, -2.0), C64::new(1.0, 3.0)] {
            let x = sys.solve_direct(z, &b).unwrap();
            let m = sys.matrix_at(z);
            assert!(residual(&m, &x, &b) < 1e-13);
            let p = sys.preconditioner(z + C64::new(0.0, 0.1)).unwrap();
            let xi = sys
                .solve_iterative(z, &b, Some(&x), &p, &SolverOptions::default())
                .unwrap();
            assert!(residual(&m, &xi, &b) < 1e-11);
        }
    }

    #[test]
    fn singular_system_is_reported() {
        let a = CscMatrix::from_triplets(
            2,
            2,
            [(0, 0, C64::new(1.0, 0.0)), (1, 0, C64::new(1.0, 0.0))],
        )
        .unwrap();
        assert!(solve_direct(&a, &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)]).is_err());
    }
}
