//! Sparse operators on composite Hilbert spaces.

use ndarray::Array2;

use super::{C64, CsrMatrix, DensityMatrix, HilbertSpace, QopsError, StateVector};

/// A square operator attached to a [`HilbertSpace`].
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    mat: CsrMatrix,
}

impl Operator {
    pub fn new(space: HilbertSpace, mat: CsrMatrix) -> Result<Self, QopsError> {
        if mat.dim() != space.total_dim() {
            return Err(QopsError::DimensionMismatch {
                expected: space.total_dim(),
                got: mat.dim(),
            });
        }
        Ok(Self { space, mat })
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        Self {
            space: space.clone(),
            mat: CsrMatrix::identity(space.total_dim()),
        }
    }

    pub fn zeros(space: &HilbertSpace) -> Self {
        Self {
            space: space.clone(),
            mat: CsrMatrix::zeros(space.total_dim()),
        }
    }

    /// |ket><bra| on a space, from basis indices.
    pub fn ket_bra(space: &HilbertSpace, ket: usize, bra: usize, amp: C64) -> Self {
        Self {
            space: space.clone(),
            mat: CsrMatrix::from_triplets(space.total_dim(), &[(ket, bra, amp)]),
        }
    }

    pub fn from_dense(space: &HilbertSpace, mat: &Array2<C64>) -> Result<Self, QopsError> {
        let csr = CsrMatrix::from_dense(mat, 0.0)?;
        Self::new(space.clone(), csr)
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.mat
    }

    pub fn to_dense(&self) -> Array2<C64> {
        self.mat.to_dense()
    }

    pub fn adjoint(&self) -> Self {
        Self { space: self.space.clone(), mat: self.mat.adjoint() }
    }

    pub fn scaled(&self, s: C64) -> Self {
        Self { space: self.space.clone(), mat: self.mat.scaled(s) }
    }

    pub fn add(&self, other: &Self) -> Result<Self, QopsError> {
        self.check_same_space(other)?;
        Ok(Self { space: self.space.clone(), mat: self.mat.add(&other.mat) })
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, QopsError> {
        self.check_same_space(other)?;
        Ok(Self { space: self.space.clone(), mat: self.mat.matmul(&other.mat) })
    }

    pub fn commutator(&self, other: &Self) -> Result<Self, QopsError> {
        let ab = self.matmul(other)?;
        let ba = other.matmul(self)?;
        ab.add(&ba.scaled(C64::new(-1.0, 0.0)))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.mat.is_hermitian(tol)
    }

    fn check_same_space(&self, other: &Self) -> Result<(), QopsError> {
        if self.space != other.space {
            return Err(QopsError::DimensionMismatch {
                expected: self.space.total_dim(),
                got: other.space.total_dim(),
            });
        }
        Ok(())
    }

    /// Apply to a state vector: A|psi>.
    pub fn apply(&self, psi: &StateVector) -> Result<StateVector, QopsError> {
        if psi.space() != &self.space {
            return Err(QopsError::DimensionMismatch {
                expected: self.space.total_dim(),
                got: psi.space().total_dim(),
            });
        }
        let mut out = vec![C64::new(0.0, 0.0); self.mat.dim()];
        self.mat.matvec(psi.amplitudes(), &mut out);
        StateVector::new(self.space.clone(), out)
    }

    /// <psi|A|psi>.
    pub fn expect_state(&self, psi: &StateVector) -> Result<C64, QopsError> {
        if psi.space() != &self.space {
            return Err(QopsError::DimensionMismatch {
                expected: self.space.total_dim(),
                got: psi.space().total_dim(),
            });
        }
        Ok(self.mat.quadratic_form(psi.amplitudes()))
    }

    /// Tr(A rho), evaluated over the sparse entries of A.
    pub fn expect_density(&self, rho: &DensityMatrix) -> Result<C64, QopsError> {
        if rho.space() != &self.space {
            return Err(QopsError::DimensionMismatch {
                expected: self.space.total_dim(),
                got: rho.space().total_dim(),
            });
        }
        let m = rho.matrix();
        let mut acc = C64::new(0.0, 0.0);
        for (r, c, v) in self.mat.iter() {
            acc += v * m[[c, r]];
        }
        Ok(acc)
    }
}

/// Kronecker product with `a` on the slower-varying index; the result space
/// is the concatenation of the two factor lists.
pub fn tensor(a: &Operator, b: &Operator) -> Operator {
    Operator {
        space: a.space.join(&b.space),
        mat: a.mat.kron(&b.mat),
    }
}

/// Embed a single-factor operator at position `which` of `space`, acting as
/// the identity on all other factors.
pub fn embed(op: &Operator, which: usize, space: &HilbertSpace) -> Result<Operator, QopsError> {
    let factors = space.factors();
    if which >= factors.len() {
        return Err(QopsError::InvalidSubsystem { index: which, count: factors.len() });
    }
    if op.space.total_dim() != factors[which] {
        return Err(QopsError::DimensionMismatch {
            expected: factors[which],
            got: op.space.total_dim(),
        });
    }
    let before: usize = factors[..which].iter().product();
    let after: usize = factors[which + 1..].iter().product();
    let mut mat = CsrMatrix::identity(before).kron(op.matrix());
    mat = mat.kron(&CsrMatrix::identity(after));
    Operator::new(space.clone(), mat)
}
