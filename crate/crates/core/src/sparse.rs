//! Compressed-sparse-column complex matrices.
//!
//! Storage keeps row indices sorted within each column and never stores an
//! explicit zero. The Kronecker product and the column-stacking superoperator
//! constructions in [`crate::dynamics`] are both column-wise expansions, which
//! is why the layout is column-major.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<C64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            col_ptr: vec![0; ncols + 1],
            row_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![ONE; n])
    }

    pub fn from_diagonal(diag: &[C64]) -> Self {
        let n = diag.len();
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        col_ptr.push(0);
        for (i, &v) in diag.iter().enumerate() {
            if v != ZERO {
                row_idx.push(i);
                values.push(v);
            }
            col_ptr.push(row_idx.len());
        }
        Self {
            nrows: n,
            ncols: n,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed
    /// and entries that end up exactly zero are dropped.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, C64)>,
    ) -> Result<Self> {
        let mut trips: Vec<(usize, usize, C64)> = triplets.into_iter().collect();
        for &(i, j, _) in &trips {
            if i >= nrows || j >= ncols {
                return Err(Error::Dimension(format!(
                    "triplet ({i}, {j}) outside {nrows}x{ncols} matrix"
                )));
            }
        }
        trips.sort_unstable_by_key(|&(i, j, _)| (j, i));
        let mut col_ptr = vec![0usize; ncols + 1];
        let mut row_idx = Vec::with_capacity(trips.len());
        let mut values: Vec<C64> = Vec::with_capacity(trips.len());
        let mut k = 0;
        for j in 0..ncols {
            while k < trips.len() && trips[k].1 == j {
                let i = trips[k].0;
                let mut v = trips[k].2;
                k += 1;
                while k < trips.len() && trips[k].1 == j && trips[k].0 == i {
                    v += trips[k].2;
                    k += 1;
                }
                if v != ZERO {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr[j + 1] = row_idx.len();
        }
        Ok(Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Dense column-major input; exact zeros are skipped.
    pub fn from_dense_col_major(nrows: usize, ncols: usize, data: &[C64]) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::Dimension(format!(
                "dense buffer of length {} for {nrows}x{ncols}",
                data.len()
            )));
        }
        let trips = (0..ncols).flat_map(|j| (0..nrows).map(move |i| (i, j, data[i + j * nrows])));
        Self::from_triplets(nrows, ncols, trips)
    }

    /// Raw-parts constructor used by deserialization checks and tests.
    pub fn try_from_parts(
        nrows: usize,
        ncols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<C64>,
    ) -> Result<Self> {
        let m = Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        };
        m.check_invariants()?;
        Ok(m)
    }

    pub fn check_invariants(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Dimension(format!("malformed CSC matrix: {msg}")));
        if self.col_ptr.len() != self.ncols + 1 || self.col_ptr[0] != 0 {
            return bad("column pointer length");
        }
        if *self.col_ptr.last().unwrap() != self.row_idx.len()
            || self.row_idx.len() != self.values.len()
        {
            return bad("entry count");
        }
        for j in 0..self.ncols {
            let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
            if a > b {
                return bad("decreasing column pointer");
            }
            let rows = &self.row_idx[a..b];
            if rows.windows(2).any(|w| w[0] >= w[1]) {
                return bad("unsorted or duplicate row index");
            }
            if rows.iter().any(|&i| i >= self.nrows) {
                return bad("row index out of range");
            }
        }
        if self.values.iter().any(|v| *v == ZERO) {
            return bad("explicit zero");
        }
        Ok(())
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }
    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
    #[inline]
    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }
    #[inline]
    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }
    #[inline]
    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn is_square(&self) -> bool {
        self.nrows == self.ncols
    }

    /// Iterates `(row, col, value)` in column-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.ncols).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1])
                .map(move |k| (self.row_idx[k], j, self.values[k]))
        })
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        let (a, b) = (self.col_ptr[j], self.col_ptr[j + 1]);
        match self.row_idx[a..b].binary_search(&i) {
            Ok(k) => self.values[a + k],
            Err(_) => ZERO,
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(
            self.ncols,
            self.nrows,
            self.iter().map(|(i, j, v)| (j, i, v)),
        )
        .expect("transpose of a valid matrix")
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(
            self.ncols,
            self.nrows,
            self.iter().map(|(i, j, v)| (j, i, v.conj())),
        )
        .expect("adjoint of a valid matrix")
    }

    pub fn conj(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.conj());
        out
    }

    pub fn scale(&self, s: C64) -> Self {
        if s == ZERO {
            return Self::zeros(self.nrows, self.ncols);
        }
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out.prune();
        out
    }

    /// `alpha*self + beta*other`.
    pub fn add_scaled(&self, alpha: C64, other: &Self, beta: C64) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::Dimension(format!(
                "cannot add {}x{} and {}x{}",
                self.nrows, self.ncols, other.nrows, other.ncols
            )));
        }
        let mut col_ptr = Vec::with_capacity(self.ncols + 1);
        let mut row_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        col_ptr.push(0);
        for j in 0..self.ncols {
            let (mut p, pe) = (self.col_ptr[j], self.col_ptr[j + 1]);
            let (mut q, qe) = (other.col_ptr[j], other.col_ptr[j + 1]);
            while p < pe || q < qe {
                let ip = if p < pe { self.row_idx[p] } else { usize::MAX };
                let iq = if q < qe { other.row_idx[q] } else { usize::MAX };
                let (i, v) = if ip == iq {
                    let v = alpha * self.values[p] + beta * other.values[q];
                    p += 1;
                    q += 1;
                    (ip, v)
                } else if ip < iq {
                    p += 1;
                    (ip, alpha * self.values[p - 1])
                } else {
                    q += 1;
                    (iq, beta * other.values[q - 1])
                };
                if v != ZERO {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            nrows: self.nrows,
            ncols: self.ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.add_scaled(ONE, other, ONE)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(ONE, other, -ONE)
    }

    /// Sparse product `self * rhs`, accumulated column by column through a
    /// dense scatter buffer.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.ncols != rhs.nrows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.nrows, self.ncols, rhs.nrows, rhs.ncols
            )));
        }
        let mut acc = vec![ZERO; self.nrows];
        let mut mark = vec![usize::MAX; self.nrows];
        let mut pattern: Vec<usize> = Vec::new();
        let mut col_ptr = Vec::with_capacity(rhs.ncols + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for j in 0..rhs.ncols {
            pattern.clear();
            for kk in rhs.col_ptr[j]..rhs.col_ptr[j + 1] {
                let (k, b) = (rhs.row_idx[kk], rhs.values[kk]);
                for p in self.col_ptr[k]..self.col_ptr[k + 1] {
                    let i = self.row_idx[p];
                    if mark[i] != j {
                        mark[i] = j;
                        acc[i] = ZERO;
                        pattern.push(i);
                    }
                    acc[i] += self.values[p] * b;
                }
            }
            pattern.sort_unstable();
            for &i in &pattern {
                if acc[i] != ZERO {
                    row_idx.push(i);
                    values.push(acc[i]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            nrows: self.nrows,
            ncols: rhs.ncols,
            col_ptr,
            row_idx,
            values,
        })
    }

    /// Kronecker product `self ⊗ rhs`: the left factor's index is the slow one.
    pub fn kron(&self, rhs: &Self) -> Self {
        let (p, q) = (rhs.nrows, rhs.ncols);
        let nrows = self.nrows * p;
        let ncols = self.ncols * q;
        let nnz = self.nnz() * rhs.nnz();
        let mut col_ptr = Vec::with_capacity(ncols + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        col_ptr.push(0);
        for ja in 0..self.ncols {
            for jb in 0..q {
                for ka in self.col_ptr[ja]..self.col_ptr[ja + 1] {
                    let (ia, va) = (self.row_idx[ka], self.values[ka]);
                    for kb in rhs.col_ptr[jb]..rhs.col_ptr[jb + 1] {
                        let v = va * rhs.values[kb];
                        if v != ZERO {
                            row_idx.push(ia * p + rhs.row_idx[kb]);
                            values.push(v);
                        }
                    }
                }
                col_ptr.push(row_idx.len());
            }
        }
        Self {
            nrows,
            ncols,
            col_ptr,
            row_idx,
            values,
        }
    }

    /// `y = self * x`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        y.iter_mut().for_each(|v| *v = ZERO);
        self.matvec_acc(x, y);
    }

    /// `y += self * x`.
    pub fn matvec_acc(&self, x: &[C64], y: &mut [C64]) {
        for (j, &xj) in x.iter().enumerate() {
            if xj == ZERO {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[k]] += self.values[k] * xj;
            }
        }
    }

    pub fn to_dense_col_major(&self) -> Vec<C64> {
        let mut out = vec![ZERO; self.nrows * self.ncols];
        for (i, j, v) in self.iter() {
            out[i + j * self.nrows] = v;
        }
        out
    }

    pub fn diagonal(&self) -> Vec<C64> {
        let n = self.nrows.min(self.ncols);
        (0..n).map(|i| self.get(i, i)).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        self.iter().all(|(i, j, _)| i == j)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        (0..self.ncols)
            .map(|j| {
                (self.col_ptr[j]..self.col_ptr[j + 1])
                    .map(|k| self.values[k].norm())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let mut rows = vec![0.0; self.nrows];
        for (i, _, v) in self.iter() {
            rows[i] += v.norm();
        }
        rows.into_iter().fold(0.0, f64::max)
    }

    /// Restriction to the rows and columns listed in `keep` (in that order).
    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let mut local = vec![usize::MAX; self.nrows.max(self.ncols)];
        for (k, &g) in keep.iter().enumerate() {
            local[g] = k;
        }
        let trips = keep.iter().enumerate().flat_map(|(jl, &jg)| {
            let local = &local;
            (self.col_ptr[jg]..self.col_ptr[jg + 1]).filter_map(move |k| {
                let il = local[self.row_idx[k]];
                (il != usize::MAX).then(|| (il, jl, self.values[k]))
            })
        });
        Self::from_triplets(keep.len(), keep.len(), trips).expect("restriction of a valid matrix")
    }

    /// Returns a copy whose structure includes every diagonal position, storing
    /// explicit zeros where needed, plus the value index of each diagonal entry.
    /// Only for internal solver use: the result violates the no-explicit-zero
    /// rule on purpose so that a shift can be written in place.
    pub(crate) fn with_full_diagonal(&self) -> (Self, Vec<usize>) {
        assert!(self.is_square());
        let n = self.ncols;
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::with_capacity(self.nnz() + n);
        let mut values = Vec::with_capacity(self.nnz() + n);
        let mut diag_pos = vec![0usize; n];
        col_ptr.push(0);
        for j in 0..n {
            let mut placed = false;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                if !placed && i >= j {
                    if i != j {
                        diag_pos[j] = row_idx.len();
                        row_idx.push(j);
                        values.push(ZERO);
                    }
                    placed = true;
                }
                if i == j {
                    diag_pos[j] = row_idx.len();
                }
                row_idx.push(i);
                values.push(self.values[k]);
            }
            if !placed {
                diag_pos[j] = row_idx.len();
                row_idx.push(j);
                values.push(ZERO);
            }
            col_ptr.push(row_idx.len());
        }
        (
            Self {
                nrows: n,
                ncols: n,
                col_ptr,
                row_idx,
                values,
            },
            diag_pos,
        )
    }

    /// Transpose that keeps explicitly stored zeros (solver-internal matrices).
    pub(crate) fn transpose_keep_zeros(&self) -> Self {
        let mut col_ptr = vec![0usize; self.nrows + 1];
        for &i in &self.row_idx {
            col_ptr[i + 1] += 1;
        }
        for i in 0..self.nrows {
            col_ptr[i + 1] += col_ptr[i];
        }
        let mut next = col_ptr.clone();
        let mut row_idx = vec![0usize; self.nnz()];
        let mut values = vec![ZERO; self.nnz()];
        for j in 0..self.ncols {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                row_idx[next[i]] = j;
                values[next[i]] = self.values[k];
                next[i] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            col_ptr,
            row_idx,
            values,
        }
    }

    pub(crate) fn values_mut(&mut self) -> &mut [C64] {
        &mut self.values
    }

    fn prune(&mut self) {
        if self.values.iter().all(|v| *v != ZERO) {
            return;
        }
        let trips: Vec<_> = self.iter().collect();
        *self =
            Self::from_triplets(self.nrows, self.ncols, trips).expect("prune of a valid matrix");
    }

    /// Borrowed view in faer's sparse format, for factorization.
    pub(crate) fn as_faer(&self) -> faer::sparse::SparseColMatRef<'_, usize, C64> {
        let symbolic = faer::sparse::SymbolicSparseColMatRef::new_checked(
            self.nrows,
            self.ncols,
            &self.col_ptr,
            None,
            &self.row_idx,
        );
        faer::sparse::SparseColMatRef::new(symbolic, &self.values)
    }
}
