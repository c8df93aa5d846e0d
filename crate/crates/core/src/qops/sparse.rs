//! Compressed-sparse-row complex matrices.
//!
//! Just enough functionality for Hamiltonian assembly and the trajectory
//! integrator: construction from triplets, matrix-vector products, Kronecker
//! products, adjoints, sums and products.

use ndarray::Array2;

use super::{C64, QopsError};

/// Square sparse matrix in CSR form with complex entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<C64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed and
    /// explicit zeros dropped.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, C64)]) -> Self {
        let mut sorted: Vec<(usize, usize, C64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            assert!(r < dim && c < dim, "triplet out of bounds");
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<C64> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut m = Self { dim, row_ptr, col_idx, values };
        m.merge_duplicates();
        m.drop_zeros();
        m
    }

    fn merge_duplicates(&mut self) {
        let mut new_col = Vec::with_capacity(self.col_idx.len());
        let mut new_val = Vec::with_capacity(self.values.len());
        let mut new_ptr = vec![0usize; self.dim + 1];
        for r in 0..self.dim {
            let start = self.row_ptr[r];
            let end = self.row_ptr[r + 1];
            let mut k = start;
            while k < end {
                let c = self.col_idx[k];
                let mut v = self.values[k];
                let mut j = k + 1;
                while j < end && self.col_idx[j] == c {
                    v += self.values[j];
                    j += 1;
                }
                new_col.push(c);
                new_val.push(v);
                k = j;
            }
            new_ptr[r + 1] = new_col.len();
        }
        self.col_idx = new_col;
        self.values = new_val;
        self.row_ptr = new_ptr;
    }

    fn drop_zeros(&mut self) {
        let mut new_col = Vec::with_capacity(self.col_idx.len());
        let mut new_val = Vec::with_capacity(self.values.len());
        let mut new_ptr = vec![0usize; self.dim + 1];
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.values[k].norm_sqr() > 0.0 {
                    new_col.push(self.col_idx[k]);
                    new_val.push(self.values[k]);
                }
            }
            new_ptr[r + 1] = new_col.len();
        }
        self.col_idx = new_col;
        self.values = new_val;
        self.row_ptr = new_ptr;
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: vec![0; dim + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            col_idx: (0..dim).collect(),
            values: vec![C64::new(1.0, 0.0); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Iterate over stored entries as (row, col, value).
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(move |k| (r, self.col_idx[k], self.values[k]))
        })
    }

    /// y = A x.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for r in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    /// y += s * (A x).
    pub fn matvec_acc(&self, x: &[C64], s: C64, y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for r in 0..self.dim {
            let mut acc = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] += s * acc;
        }
    }

    /// <x|A|x> without forming A x separately.
    pub fn quadratic_form(&self, x: &[C64]) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..self.dim {
            let mut row = C64::new(0.0, 0.0);
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.values[k] * x[self.col_idx[k]];
            }
            acc += x[r].conj() * row;
        }
        acc
    }

    /// Kronecker product, `self` on the slower-varying index.
    pub fn kron(&self, other: &Self) -> Self {
        let dim = self.dim * other.dim;
        let nnz = self.nnz() * other.nnz();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for ra in 0..self.dim {
            for rb in 0..other.dim {
                for ka in self.row_ptr[ra]..self.row_ptr[ra + 1] {
                    let ca = self.col_idx[ka];
                    let va = self.values[ka];
                    for kb in other.row_ptr[rb]..other.row_ptr[rb + 1] {
                        col_idx.push(ca * other.dim + other.col_idx[kb]);
                        values.push(va * other.values[kb]);
                    }
                }
                row_ptr.push(col_idx.len());
            }
        }
        Self { dim, row_ptr, col_idx, values }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut counts = vec![0usize; self.dim + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.dim {
            counts[c + 1] += counts[c];
        }
        let row_ptr = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![C64::new(0.0, 0.0); self.nnz()];
        let mut next = counts;
        for (r, c, v) in self.iter() {
            let slot = next[c];
            col_idx[slot] = r;
            values[slot] = v.conj();
            next[c] += 1;
        }
        Self { dim: self.dim, row_ptr, col_idx, values }
    }

    pub fn scaled(&self, s: C64) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= s;
        }
        out
    }

    /// Element-wise sum.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut row_ptr = vec![0usize; self.dim + 1];
        let mut col_idx = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.dim {
            let (mut ia, ea) = (self.row_ptr[r], self.row_ptr[r + 1]);
            let (mut ib, eb) = (other.row_ptr[r], other.row_ptr[r + 1]);
            while ia < ea || ib < eb {
                let ca = if ia < ea { self.col_idx[ia] } else { usize::MAX };
                let cb = if ib < eb { other.col_idx[ib] } else { usize::MAX };
                if ca < cb {
                    col_idx.push(ca);
                    values.push(self.values[ia]);
                    ia += 1;
                } else if cb < ca {
                    col_idx.push(cb);
                    values.push(other.values[ib]);
                    ib += 1;
                } else {
                    col_idx.push(ca);
                    values.push(self.values[ia] + other.values[ib]);
                    ia += 1;
                    ib += 1;
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        let mut m = Self { dim: self.dim, row_ptr, col_idx, values };
        m.drop_zeros();
        m
    }

    /// Sparse matrix product A·B.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let dim = self.dim;
        let mut acc = vec![C64::new(0.0, 0.0); dim];
        let mut marker = vec![usize::MAX; dim];
        let mut row_ptr = vec![0usize; dim + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..dim {
            let mut cols_here: Vec<usize> = Vec::new();
            for ka in self.row_ptr[r]..self.row_ptr[r + 1] {
                let a = self.values[ka];
                let m = self.col_idx[ka];
                for kb in other.row_ptr[m]..other.row_ptr[m + 1] {
                    let c = other.col_idx[kb];
                    if marker[c] != r {
                        marker[c] = r;
                        acc[c] = C64::new(0.0, 0.0);
                        cols_here.push(c);
                    }
                    acc[c] += a * other.values[kb];
                }
            }
            cols_here.sort_unstable();
            for &c in &cols_here {
                if acc[c].norm_sqr() > 0.0 {
                    col_idx.push(c);
                    values.push(acc[c]);
                }
            }
            row_ptr[r + 1] = col_idx.len();
        }
        Self { dim, row_ptr, col_idx, values }
    }

    /// A†A, the rate operator of a collapse channel.
    pub fn dagger_self(&self) -> Self {
        self.adjoint().matmul(self)
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut out = Array2::zeros((self.dim, self.dim));
        for (r, c, v) in self.iter() {
            out[[r, c]] += v;
        }
        out
    }

    pub fn from_dense(mat: &Array2<C64>, tol: f64) -> Result<Self, QopsError> {
        let (rows, cols) = mat.dim();
        if rows != cols {
            return Err(QopsError::NotSquare { rows, cols });
        }
        let mut triplets = Vec::new();
        for ((r, c), &v) in mat.indexed_iter() {
            if v.norm() > tol {
                triplets.push((r, c, v));
            }
        }
        Ok(Self::from_triplets(rows, &triplets))
    }

    /// max_ij |A_ij - B_ij|.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let d = self.add(&other.scaled(C64::new(-1.0, 0.0)));
        d.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Whether max |A - A†| < tol.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.max_abs_diff(&self.adjoint()) < tol
    }
}
