//! Small least-squares kernels shared by the scan and parity fits.
//!
//! Everything here is dense and tiny (a handful of parameters), so plain
//! normal equations with partial-pivot elimination are adequate.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LsqError {
    #[error("singular normal equations (pivot {pivot:.3e})")]
    Singular { pivot: f64 },
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("fit did not converge after {0} iterations")]
    NoConvergence(usize),
}

/// Solve A x = b in place for a small dense system with partial pivoting.
pub fn solve_dense(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>, LsqError> {
    let n = b.len();
    for (row, a_row) in a.iter().enumerate() {
        assert_eq!(a_row.len(), n, "row {row} has wrong length");
    }
    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.partial_cmp(&y.1).unwrap())
            .unwrap();
        if pivot < 1e-300 {
            return Err(LsqError::Singular { pivot });
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    Ok(x)
}

/// Result of a weighted linear least-squares solve.
#[derive(Debug, Clone)]
pub struct LinearFit {
    /// Estimated coefficients.
    pub coeffs: Vec<f64>,
    /// Covariance matrix of the coefficients, (X^T W X)^{-1}.
    pub covariance: Vec<Vec<f64>>,
    /// Weighted residual sum of squares.
    pub wrss: f64,
}

/// Weighted linear least squares: y ~ design * coeffs with weights w
/// (w_i = 1/sigma_i^2). `design` is row-major, one row per observation.
pub fn weighted_linear_fit(
    design: &[Vec<f64>],
    y: &[f64],
    weights: &[f64],
) -> Result<LinearFit, LsqError> {
    let n = y.len();
    assert_eq!(design.len(), n);
    assert_eq!(weights.len(), n);
    let p = design[0].len();
    if n < p {
        return Err(LsqError::TooFewPoints { needed: p, got: n });
    }

    // normal equations
    let mut ata = vec![vec![0.0; p]; p];
    let mut atb = vec![0.0; p];
    for i in 0..n {
        let w = weights[i];
        for r in 0..p {
            atb[r] += w * design[i][r] * y[i];
            for c in r..p {
                ata[r][c] += w * design[i][r] * design[i][c];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            ata[r][c] = ata[c][r];
        }
    }

    // covariance: invert by solving against unit vectors
    let mut covariance = vec![vec![0.0; p]; p];
    for k in 0..p {
        let mut a = ata.clone();
        let mut e = vec![0.0; p];
        e[k] = 1.0;
        let col = solve_dense(&mut a, &mut e)?;
        for r in 0..p {
            covariance[r][k] = col[r];
        }
    }

    let mut a = ata;
    let mut b = atb;
    let coeffs = solve_dense(&mut a, &mut b)?;

    let mut wrss = 0.0;
    for i in 0..n {
        let fit: f64 = (0..p).map(|k| design[i][k] * coeffs[k]).sum();
        wrss += weights[i] * (y[i] - fit) * (y[i] - fit);
    }
    Ok(LinearFit { coeffs, covariance, wrss })
}

/// Gauss-Newton over a few nonlinear parameters with the linear parameters
/// profiled out at every step (variable projection). The closure returns the
/// design matrix of the linear subproblem at the given nonlinear parameters.
///
/// Returns the nonlinear parameters, the profiled linear fit, and the number
/// of iterations used.
pub fn varpro_gauss_newton<F>(
    theta0: &[f64],
    scales: &[f64],
    y: &[f64],
    weights: &[f64],
    mut design_at: F,
    max_iter: usize,
) -> Result<(Vec<f64>, LinearFit, usize), LsqError>
where
    F: FnMut(&[f64]) -> Vec<Vec<f64>>,
{
    let q = theta0.len();
    let mut theta = theta0.to_vec();

    fn profile<G>(
        design_at: &mut G,
        theta: &[f64],
        y: &[f64],
        weights: &[f64],
    ) -> Result<(f64, LinearFit), LsqError>
    where
        G: FnMut(&[f64]) -> Vec<Vec<f64>>,
    {
        let design = design_at(theta);
        let fit = weighted_linear_fit(&design, y, weights)?;
        Ok((fit.wrss, fit))
    }

    let (mut best_wrss, mut best_fit) = profile(&mut design_at, &theta, y, weights)?;
    let mut lambda = 1e-3; // Levenberg damping for robustness far from optimum

    for iter in 0..max_iter {
        // numerical Jacobian of the profiled residual norm wrt theta
        let mut grad = vec![0.0; q];
        let mut jtj = vec![vec![0.0; q]; q];
        // residuals at theta
        let design = design_at(&theta);
        let fit = weighted_linear_fit(&design, y, weights)?;
        let p = fit.coeffs.len();
        let n = y.len();
        let resid: Vec<f64> = (0..n)
            .map(|i| {
                let model: f64 = (0..p).map(|k| design[i][k] * fit.coeffs[k]).sum();
                y[i] - model
            })
            .collect();
        // finite-difference residual Jacobian (profiled)
        let mut jac = vec![vec![0.0; q]; n];
        for j in 0..q {
            let h = 1e-6 * scales[j].max(1e-300);
            let mut th = theta.clone();
            th[j] += h;
            let design_h = design_at(&th);
            let fit_h = weighted_linear_fit(&design_h, y, weights)?;
            for i in 0..n {
                let model_h: f64 = (0..p).map(|k| design_h[i][k] * fit_h.coeffs[k]).sum();
                let resid_h = y[i] - model_h;
                jac[i][j] = (resid_h - resid[i]) / h;
            }
        }
        for i in 0..n {
            let w = weights[i];
            for r in 0..q {
                grad[r] += w * jac[i][r] * resid[i];
                for c in r..q {
                    jtj[r][c] += w * jac[i][r] * jac[i][c];
                }
            }
        }
        for r in 0..q {
            for c in 0..r {
                jtj[r][c] = jtj[c][r];
            }
        }

        // damped step: (JtJ + lambda diag) d = -grad
        let mut stepped = false;
        for _ in 0..8 {
            let mut a = jtj.clone();
            for r in 0..q {
                a[r][r] *= 1.0 + lambda;
                if a[r][r] == 0.0 {
                    a[r][r] = lambda * 1e-12;
                }
            }
            let mut b: Vec<f64> = grad.iter().map(|g| -g).collect();
            let step = match solve_dense(&mut a, &mut b) {
                Ok(s) => s,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial: Vec<f64> = theta.iter().zip(&step).map(|(t, s)| t + s).collect();
            match profile(&mut design_at, &trial, y, weights) {
                Ok((wrss, fit)) if wrss <= best_wrss * (1.0 + 1e-15) => {
                    let rel = (best_wrss - wrss).abs() / best_wrss.max(1e-300);
                    theta = trial;
                    best_wrss = wrss;
                    best_fit = fit;
                    lambda = (lambda * 0.3).max(1e-12);
                    stepped = true;
                    if rel < 1e-14 {
                        return Ok((theta, best_fit, iter + 1));
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                }
            }
        }
        if !stepped {
            // no downhill step found; we are at (numerical) convergence
            return Ok((theta, best_fit, iter + 1));
        }
    }
    Ok((theta, best_fit, max_iter))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let mut a = vec![vec![2.0, 1.0], vec![1.0, 3.0]];
        let mut b = vec![5.0, 10.0];
        let x = solve_dense(&mut a, &mut b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_reported() {
        let mut a = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        let mut b = vec![1.0, 2.0];
        assert!(matches!(solve_dense(&mut a, &mut b), Err(LsqError::Singular { .. })));
    }

    #[test]
    fn linear_fit_exact_recovery() {
        // y = 2 + 3x, equal weights
        let xs: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let design: Vec<Vec<f64>> = xs.iter().map(|&x| vec![1.0, x]).collect();
        let y: Vec<f64> = xs.iter().map(|&x| 2.0 + 3.0 * x).collect();
        let w = vec![1.0; xs.len()];
        let fit = weighted_linear_fit(&design, &y, &w).unwrap();
        assert!((fit.coeffs[0] - 2.0).abs() < 1e-12);
        assert!((fit.coeffs[1] - 3.0).abs() < 1e-12);
        assert!(fit.wrss < 1e-20);
    }

    #[test]
    fn varpro_recovers_exponential_rate() {
        // y = a * exp(-k x); nonlinear in k, linear in a
        let xs: Vec<f64> = (0..40).map(|k| 0.1 * k as f64).collect();
        let y: Vec<f64> = xs.iter().map(|&x| 2.5 * (-0.7 * x).exp()).collect();
        let w = vec![1.0; xs.len()];
        let design_at = |theta: &[f64]| -> Vec<Vec<f64>> {
            xs.iter().map(|&x| vec![(-theta[0] * x).exp()]).collect()
        };
        let (theta, fit, _) =
            varpro_gauss_newton(&[0.3], &[0.3], &y, &w, design_at, 100).unwrap();
        assert!((theta[0] - 0.7).abs() < 1e-8, "rate {}", theta[0]);
        assert!((fit.coeffs[0] - 2.5).abs() < 1e-8);
    }
}
