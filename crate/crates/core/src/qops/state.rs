//! State vectors, density matrices and the partial trace.

use ndarray::Array2;

use super::{C64, HilbertSpace, QopsError, hermitian_eigenvalues};

/// Pure state on a composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    space: HilbertSpace,
    amp: Vec<C64>,
}

impl StateVector {
    pub fn new(space: HilbertSpace, amp: Vec<C64>) -> Result<Self, QopsError> {
        if amp.len() != space.total_dim() {
            return Err(QopsError::DimensionMismatch {
                expected: space.total_dim(),
                got: amp.len(),
            });
        }
        Ok(Self { space, amp })
    }

    /// Basis state |labels...>.
    pub fn basis_state(space: &HilbertSpace, labels: &[usize]) -> Result<Self, QopsError> {
        let idx = space.basis_index(labels)?;
        let mut amp = vec![C64::new(0.0, 0.0); space.total_dim()];
        amp[idx] = C64::new(1.0, 0.0);
        Ok(Self { space: space.clone(), amp })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amp
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amp
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amp.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm_sqr().sqrt();
        let mut out = self.clone();
        if n > 0.0 {
            for a in &mut out.amp {
                *a /= n;
            }
        }
        out
    }

    /// Whether the squared norm is within `tol` of 1.
    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm_sqr() - 1.0).abs() < tol
    }

    /// <self|other>.
    pub fn inner(&self, other: &Self) -> Result<C64, QopsError> {
        if self.space != other.space {
            return Err(QopsError::DimensionMismatch {
                expected: self.space.total_dim(),
                got: other.space.total_dim(),
            });
        }
        Ok(self
            .amp
            .iter()
            .zip(&other.amp)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// Superposition sum_k coeff_k |states_k>, not normalized.
    pub fn superposition(terms: &[(C64, &StateVector)]) -> Result<Self, QopsError> {
        let space = terms[0].1.space.clone();
        let mut amp = vec![C64::new(0.0, 0.0); space.total_dim()];
        for (coeff, s) in terms {
            if s.space != space {
                return Err(QopsError::DimensionMismatch {
                    expected: space.total_dim(),
                    got: s.space.total_dim(),
                });
            }
            for (acc, a) in amp.iter_mut().zip(&s.amp) {
                *acc += *coeff * a;
            }
        }
        Ok(Self { space, amp })
    }
}

/// Dense density matrix on a composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    space: HilbertSpace,
    mat: Array2<C64>,
}

impl DensityMatrix {
    pub fn new(space: HilbertSpace, mat: Array2<C64>) -> Result<Self, QopsError> {
        let (rows, cols) = mat.dim();
        if rows != cols {
            return Err(QopsError::NotSquare { rows, cols });
        }
        if rows != space.total_dim() {
            return Err(QopsError::DimensionMismatch {
                expected: space.total_dim(),
                got: rows,
            });
        }
        Ok(Self { space, mat })
    }

    /// |psi><psi|.
    pub fn from_pure(psi: &StateVector) -> Self {
        let d = psi.space.total_dim();
        let mut mat = Array2::zeros((d, d));
        for (r, a) in psi.amp.iter().enumerate() {
            for (c, b) in psi.amp.iter().enumerate() {
                mat[[r, c]] = a * b.conj();
            }
        }
        Self { space: psi.space.clone(), mat }
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.mat
    }

    pub fn matrix_mut(&mut self) -> &mut Array2<C64> {
        &mut self.mat
    }

    pub fn trace(&self) -> C64 {
        self.mat.diag().sum()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { space: self.space.clone(), mat: self.mat.mapv(|v| v * s) }
    }

    pub fn normalized(&self) -> Self {
        let t = self.trace().re;
        if t > 0.0 {
            self.scaled(1.0 / t)
        } else {
            self.clone()
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, QopsError> {
        if self.space != other.space {
            return Err(QopsError::DimensionMismatch {
                expected: self.space.total_dim(),
                got: other.space.total_dim(),
            });
        }
        Ok(Self { space: self.space.clone(), mat: &self.mat + &other.mat })
    }

    /// max_ij |rho_ij - rho†_ij|.
    pub fn hermiticity_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        let n = self.mat.nrows();
        for r in 0..n {
            for c in 0..n {
                worst = worst.max((self.mat[[r, c]] - self.mat[[c, r]].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_defect() < tol
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigenvalues(&self.mat)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()
            .first()
            .copied()
            .unwrap_or(0.0)
    }

    /// Validity check: hermitian within `herm_tol`, trace within `trace_tol`
    /// of 1, eigenvalues above `-psd_floor`.
    pub fn is_valid_state(&self, herm_tol: f64, trace_tol: f64, psd_floor: f64) -> bool {
        self.is_hermitian(herm_tol)
            && (self.trace().re - 1.0).abs() < trace_tol
            && self.trace().im.abs() < trace_tol
            && self.min_eigenvalue() > -psd_floor
    }

    /// 1/2 * sum |eigenvalues(rho - other)|.
    pub fn trace_distance(&self, other: &Self) -> Result<f64, QopsError> {
        if self.space != other.space {
            return Err(QopsError::DimensionMismatch {
                expected: self.space.total_dim(),
                got: other.space.total_dim(),
            });
        }
        let diff = &self.mat - &other.mat;
        let eigs = hermitian_eigenvalues(&diff);
        Ok(0.5 * eigs.iter().map(|e| e.abs()).sum::<f64>())
    }

    /// <target|rho|target> for a pure target state.
    pub fn fidelity_pure(&self, target: &StateVector) -> Result<f64, QopsError> {
        if self.space != target.space {
            return Err(QopsError::DimensionMismatch {
                expected: self.space.total_dim(),
                got: target.space.total_dim(),
            });
        }
        let mut acc = C64::new(0.0, 0.0);
        for r in 0..self.mat.nrows() {
            for c in 0..self.mat.ncols() {
                acc += target.amp[r].conj() * self.mat[[r, c]] * target.amp[c];
            }
        }
        Ok(acc.re)
    }

    /// Restrict to the span of the given full-space basis indices, returning
    /// the unnormalized block and the population it carries.
    pub fn restrict(
        &self,
        indices: &[usize],
        subspace: HilbertSpace,
    ) -> Result<(DensityMatrix, f64), QopsError> {
        if indices.len() != subspace.total_dim() {
            return Err(QopsError::DimensionMismatch {
                expected: subspace.total_dim(),
                got: indices.len(),
            });
        }
        let d = indices.len();
        let mut mat = Array2::zeros((d, d));
        for (r, &ir) in indices.iter().enumerate() {
            for (c, &ic) in indices.iter().enumerate() {
                mat[[r, c]] = self.mat[[ir, ic]];
            }
        }
        let weight = mat.diag().sum().re;
        Ok((DensityMatrix { space: subspace, mat }, weight))
    }
}

/// Trace out every factor not listed in `keep`; kept factors stay in
/// ascending index order.
pub fn partial_trace(rho: &DensityMatrix, keep: &[usize]) -> Result<DensityMatrix, QopsError> {
    let space = rho.space();
    let nf = space.num_factors();
    if keep.is_empty() {
        return Err(QopsError::InvalidKeepSet);
    }
    let mut keep_sorted = keep.to_vec();
    keep_sorted.sort_unstable();
    keep_sorted.dedup();
    if keep_sorted.len() != keep.len() || *keep_sorted.last().unwrap() >= nf {
        return Err(QopsError::InvalidKeepSet);
    }

    let out_space = space.select(&keep_sorted)?;
    let out_dim = out_space.total_dim();
    let mut out = Array2::zeros((out_dim, out_dim));

    let dim = space.total_dim();
    let kept: Vec<bool> = (0..nf).map(|k| keep_sorted.contains(&k)).collect();
    // per full index, its kept-subindex and traced-subindex
    let mut kept_part = vec![0usize; dim];
    let mut traced_part = vec![0usize; dim];
    for idx in 0..dim {
        let labels = space.basis_labels(idx);
        let mut kp = 0usize;
        let mut tp = 0usize;
        for (k, &l) in labels.iter().enumerate() {
            if kept[k] {
                kp = kp * space.factors()[k] + l;
            } else {
                tp = tp * space.factors()[k] + l;
            }
        }
        kept_part[idx] = kp;
        traced_part[idx] = tp;
    }

    let m = rho.matrix();
    for r in 0..dim {
        for c in 0..dim {
            if traced_part[r] == traced_part[c] {
                out[[kept_part[r], kept_part[c]]] += m[[r, c]];
            }
        }
    }
    DensityMatrix::new(out_space, out)
}
