//! Minimal complex linear algebra for composite Hilbert spaces.
//!
//! Provides states, sparse operators, tensor products and partial traces for
//! spaces built as ordered tensor products of small factors. The global
//! factor ordering used throughout the crate is
//! `(ion 1, ion 2, mode H, mode V)`; all higher-level modules rely on it.
//!
//! Operators use sparse (CSR) storage since Hamiltonians and collapse
//! operators are sparse; density matrices are dense since the conditional
//! ion states of interest are 9×9 or smaller.

mod eig;
mod operator;
mod sparse;
mod state;

pub use eig::hermitian_eigenvalues;
pub use operator::{embed, tensor, Operator};
pub use sparse::CsrMatrix;
pub use state::{partial_trace, DensityMatrix, StateVector};

use thiserror::Error;

/// Complex scalar used everywhere.
pub type C64 = num_complex::Complex64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QopsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("factor dimensions must be >= 2, got {0}")]
    InvalidFactor(usize),
    #[error("subsystem index {index} out of range for {count} factors")]
    InvalidSubsystem { index: usize, count: usize },
    #[error("keep set must be nonempty and contain valid, distinct indices")]
    InvalidKeepSet,
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
}

/// An ordered tensor product of finite-dimensional factors.
///
/// Factor 0 varies slowest in the composite basis index (row-major
/// convention, matching the Kronecker product).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HilbertSpace {
    factors: Vec<usize>,
}

impl HilbertSpace {
    /// Build a space from factor dimensions. Every factor must be >= 2.
    pub fn new(factors: &[usize]) -> Result<Self, QopsError> {
        if factors.is_empty() {
            return Err(QopsError::InvalidKeepSet);
        }
        for &d in factors {
            if d < 2 {
                return Err(QopsError::InvalidFactor(d));
            }
        }
        Ok(Self { factors: factors.to_vec() })
    }

    /// A single-factor space of dimension `dim`.
    pub fn single(dim: usize) -> Result<Self, QopsError> {
        Self::new(&[dim])
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    /// Product of all factor dimensions.
    pub fn total_dim(&self) -> usize {
        self.factors.iter().product()
    }

    /// Stride of each factor in the composite index (factor 0 slowest).
    pub fn strides(&self) -> Vec<usize> {
        let n = self.factors.len();
        let mut strides = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.factors[k + 1];
        }
        strides
    }

    /// Composite basis index of the given per-factor labels.
    pub fn basis_index(&self, labels: &[usize]) -> Result<usize, QopsError> {
        if labels.len() != self.factors.len() {
            return Err(QopsError::DimensionMismatch {
                expected: self.factors.len(),
                got: labels.len(),
            });
        }
        let mut idx = 0usize;
        for (k, (&l, &d)) in labels.iter().zip(&self.factors).enumerate() {
            if l >= d {
                return Err(QopsError::InvalidSubsystem { index: k, count: d });
            }
            idx = idx * d + l;
        }
        Ok(idx)
    }

    /// Per-factor labels of a composite basis index.
    pub fn basis_labels(&self, mut index: usize) -> Vec<usize> {
        let mut labels = vec![0usize; self.factors.len()];
        for k in (0..self.factors.len()).rev() {
            labels[k] = index % self.factors[k];
            index /= self.factors[k];
        }
        labels
    }

    /// Concatenation of two factor lists, as produced by a tensor product.
    pub fn join(&self, other: &HilbertSpace) -> HilbertSpace {
        let mut factors = self.factors.clone();
        factors.extend_from_slice(&other.factors);
        HilbertSpace { factors }
    }

    /// The subspace consisting of the given factors (in the given order).
    pub fn select(&self, keep: &[usize]) -> Result<HilbertSpace, QopsError> {
        if keep.is_empty() {
            return Err(QopsError::InvalidKeepSet);
        }
        let mut factors = Vec::with_capacity(keep.len());
        for &k in keep {
            if k >= self.factors.len() {
                return Err(QopsError::InvalidSubsystem {
                    index: k,
                    count: self.factors.len(),
                });
            }
            factors.push(self.factors[k]);
        }
        Ok(HilbertSpace { factors })
    }
}
