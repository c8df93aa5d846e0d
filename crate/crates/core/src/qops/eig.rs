//! Eigenvalues of Hermitian matrices via the cyclic Jacobi method.
//!
//! Eigenvalues only, no vectors: the toolkit needs spectra for positivity
//! checks and trace distances, both on small dense matrices.

use ndarray::Array2;

use super::C64;

/// Eigenvalues of a Hermitian matrix, ascending.
///
/// The input is symmetrized as (A + A†)/2 before iterating, so tiny
/// anti-Hermitian noise is tolerated. Panics if the matrix is not square.
pub fn hermitian_eigenvalues(mat: &Array2<C64>) -> Vec<f64> {
    let (rows, cols) = mat.dim();
    assert_eq!(rows, cols, "hermitian_eigenvalues requires a square matrix");
    let n = rows;
    if n == 0 {
        return Vec::new();
    }
    let mut a: Array2<C64> = Array2::zeros((n, n));
    for r in 0..n {
        for c in 0..n {
            a[[r, c]] = 0.5 * (mat[[r, c]] + mat[[c, r]].conj());
        }
    }

    let scale: f64 = a.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
    let tol = 1e-15 * scale;
    let max_sweeps = 100;

    for _ in 0..max_sweeps {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[[p, q]].norm());
            }
        }
        if off < tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                let mag = apq.norm();
                if mag < tol * 1e-2 {
                    continue;
                }
                // Unitary 2x2 transform V = D J with D = diag(1, e^{-i phi})
                // stripping the phase of a_pq (= |a_pq| e^{i phi}) and J the
                // real Jacobi rotation [[c, s], [-s, c]] zeroing the result.
                let phase = apq / mag;
                let app = a[[p, p]].re;
                let aqq = a[[q, q]].re;
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // A <- A V
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * phase.conj() * akq;
                    a[[k, q]] = s * akp + c * phase.conj() * akq;
                }
                // A <- V† A
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * phase * aqk;
                    a[[q, k]] = s * apk + c * phase * aqk;
                }
                // clean up rounding on the eliminated pair
                a[[p, q]] = C64::new(0.0, 0.0);
                a[[q, p]] = C64::new(0.0, 0.0);
            }
        }
    }

    let mut eigs: Vec<f64> = (0..n).map(|k| a[[k, k]].re).collect();
    eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eigs
}
