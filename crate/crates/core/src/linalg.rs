//! Small dense linear-algebra helpers: cyclic Jacobi eigenvalues for symmetric
//! matrices and Lyapunov equations by Kronecker vectorization.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Only the symmetric part of `a` is used.
pub fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    assert!(a.is_square(), "Jacobi needs a square matrix");
    let n = a.nrows();
    let mut m = symmetric_part(a);
    let scale = m.norm().max(f64::MIN_POSITIVE);

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[(k, p)];
                    let akq = m[(k, q)];
                    m[(k, p)] = c * akp - s * akq;
                    m[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[(p, k)];
                    let aqk = m[(q, k)];
                    m[(p, k)] = c * apk - s * aqk;
                    m[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

pub fn symmetric_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Solves `X·A + Aᵀ·X = C` for `X` through the vectorized system
/// `(Aᵀ ⊗ I + I ⊗ Aᵀ) vec(X) = vec(C)`.
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if !a.is_square() || c.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            what: "Lyapunov operands",
            expected: n,
            got: c.nrows(),
        });
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a.transpose();
    let system = at.kronecker(&eye) + eye.kronecker(&at);
    let lu = system.full_piv_lu();

    let u = lu.u();
    let diag_max = u.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let diag_min = u.diagonal().iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    if diag_max == 0.0 || diag_min <= 1e-13 * diag_max {
        return Err(Error::SingularLyapunov);
    }

    let rhs = DVector::from_column_slice(c.as_slice());
    let sol = lu.solve(&rhs).ok_or(Error::SingularLyapunov)?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Frobenius norm of `X·A + Aᵀ·X − C`.
pub fn lyapunov_residual(x: &DMatrix<f64>, a: &DMatrix<f64>, c: &DMatrix<f64>) -> f64 {
    (x * a + a.transpose() * x - c).norm()
}

/// Cholesky test on the symmetric part.
pub fn is_positive_definite(a: &DMatrix<f64>) -> bool {
    a.is_square() && a.nrows() > 0 && Cholesky::new(symmetric_part(a)).is_some()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

pub fn euclidean_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jacobi_matches_nalgebra_on_random_symmetric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in 1..=12 {
            let raw = DMatrix::from_fn(n, n, |_, _| rng.random_range(-5.0..5.0));
            let sym = symmetric_part(&raw);
            let ours = symmetric_eigenvalues(&sym);
            let mut theirs: Vec<f64> = sym.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            theirs.sort_by(f64::total_cmp);
            for (a, b) in ours.iter().zip(&theirs) {
                assert_relative_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn jacobi_diagonal_is_identity_operation() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.0, 2.0]));
        assert_eq!(symmetric_eigenvalues(&m), vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn scalar_lyapunov() {
        let a = DMatrix::from_element(1, 1, -1.0);
        let c = DMatrix::from_element(1, 1, -1.0);
        let p = solve_lyapunov(&a, &c).unwrap();
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn singular_lyapunov_is_reported() {
        // A with eigenvalues +1 and -1: the operator X -> XA + AᵀX is singular.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let c = DMatrix::identity(2, 2);
        assert!(matches!(solve_lyapunov(&a, &c), Err(Error::SingularLyapunov)));
    }

    #[test]
    fn nonsymmetric_lyapunov_residual_small() {
        let a = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.5, 0.0, -3.0, 1.0, 0.3, 0.0, -1.0]);
        let c = -DMatrix::<f64>::identity(3, 3);
        let x = solve_lyapunov(&a, &c).unwrap();
        assert!(lyapunov_residual(&x, &a, &c) < 1e-12);
        assert!(is_positive_definite(&x));
    }
}
