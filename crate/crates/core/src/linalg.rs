//! Dense linear algebra shared by the estimators: a checked matrix exponential
//! for kernel bases, and column-equilibrated least squares with
//! condition-number reporting.

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::scalar::{lit, Scalar};

/// Condition number above which least-squares solves fall back to a ridge.
pub const RIDGE_CONDITION: f64 = 1e12;

/// Matrix exponential (nalgebra's scaling and squaring), with input checks.
pub fn matrix_exponential<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !m.is_square() {
        return invalid(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        ));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return invalid("matrix exponential of a non-finite matrix");
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    Ok(m.exp())
}

/// Result of a least-squares solve.
#[derive(Debug, Clone)]
pub struct LsSolution<T: Scalar> {
    pub x: DVector<T>,
    /// 2-norm condition number of the column-equilibrated design.
    pub condition: T,
    /// True when the ridge fallback was used.
    pub ridged: bool,
}

/// Minimizes `||a x - b||` by Householder QR on the column-equilibrated
/// design. Falls back to a ridge of `1e-10 * trace / dim` on the normal
/// equations when the equilibrated condition number exceeds [`RIDGE_CONDITION`].
pub fn least_squares<T: Scalar>(a: &DMatrix<T>, b: &DVector<T>) -> Result<LsSolution<T>> {
    let (rows, cols) = a.shape();
    if b.len() != rows {
        return invalid(format!(
            "least squares: {} rows but rhs of length {}",
            rows,
            b.len()
        ));
    }
    if cols == 0 {
        return Ok(LsSolution {
            x: DVector::zeros(0),
            condition: T::one(),
            ridged: false,
        });
    }
    let scales: Vec<T> = (0..cols)
        .map(|j| {
            let n = a.column(j).norm();
            if n > T::zero() {
                n
            } else {
                T::one()
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }

    let mut condition = T::max_value().unwrap_or_else(|| lit(f64::MAX));
    let mut solution = None;
    if rows >= cols {
        let qr = scaled.clone().qr();
        let r = qr.r();
        let sv = r.singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if smin > T::zero() {
            condition = smax / smin;
        }
        if condition <= lit(RIDGE_CONDITION) {
            let qtb = qr.q().transpose() * b;
            solution = r.solve_upper_triangular(&qtb);
        }
    }
    let (x, ridged) = match solution {
        Some(x) => (x, false),
        None => {
            let ata = scaled.transpose() * &scaled;
            let lambda = lit::<T>(1e-10) * ata.trace() / lit::<T>(cols as f64);
            let reg = ata + DMatrix::<T>::identity(cols, cols) * lambda;
            let atb = scaled.transpose() * b;
            let x = reg
                .cholesky()
                .map(|c| c.solve(&atb))
                .ok_or_else(|| Error::Singular {
                    context: "ridge-regularized least squares".into(),
                    condition: crate::scalar::to_f64(condition),
                })?;
            (x, true)
        }
    };
    let x = DVector::from_iterator(cols, x.iter().zip(&scales).map(|(v, s)| *v / *s));
    Ok(LsSolution {
        x,
        condition,
        ridged,
    })
}

/// Solves a symmetric positive (semi)definite system, reporting the
/// eigenvalue-based condition number. A ridge is added when needed.
pub fn solve_symmetric<T: Scalar>(m: &DMatrix<T>, rhs: &DMatrix<T>) -> Result<(DMatrix<T>, T)> {
    let dim = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let emax = eig
        .eigenvalues
        .iter()
        .fold(T::zero(), |a, v| if v.abs() > a { v.abs() } else { a });
    let emin = eig
        .eigenvalues
        .iter()
        .fold(emax, |a, v| if *v < a { *v } else { a });
    let condition = if emin > T::zero() {
        emax / emin
    } else {
        lit(f64::INFINITY)
    };
    let work = if condition > lit(RIDGE_CONDITION) {
        let lambda = lit::<T>(1e-10) * m.trace() / lit::<T>(dim.max(1) as f64);
        m + DMatrix::<T>::identity(dim, dim) * lambda
    } else {
        m.clone()
    };
    let chol = work.cholesky().ok_or_else(|| Error::Singular {
        context: "symmetric solve".into(),
        condition: crate::scalar::to_f64(condition),
    })?;
    Ok((chol.solve(rhs), condition))
}

/// Inverse of a symmetric positive definite matrix, with the smallest
/// eigenvalue reported on failure.
pub fn spd_inverse(m: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let emin = eig.eigenvalues.min();
    let emax = eig.eigenvalues.max();
    if emin <= emax * 1e-14 || emin <= 0.0 {
        return Err(Error::Singular {
            context: format!("{context}: smallest eigenvalue {emin:e}"),
            condition: if emin > 0.0 {
                emax / emin
            } else {
                f64::INFINITY
            },
        });
    }
    let mut inv = DMatrix::zeros(m.nrows(), m.ncols());
    for (k, lam) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) / *lam;
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_of_zero_is_identity() {
        let e = matrix_exponential(&DMatrix::<f64>::zeros(3, 3)).unwrap();
        assert_relative_eq!(e, DMatrix::identity(3, 3), epsilon = 1e-15);
    }

    #[test]
    fn exp_of_rotation_generator() {
        let half_pi = std::f64::consts::FRAC_PI_2;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, half_pi, -half_pi, 0.0]);
        let e = matrix_exponential(&m).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_relative_eq!(e, expected, epsilon = 1e-14);
    }

    #[test]
    fn exp_rejects_non_square() {
        assert!(matrix_exponential(&DMatrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn exp_single_precision() {
        let m = DMatrix::from_row_slice(1, 1, &[1.0f32]);
        let e = matrix_exponential(&m).unwrap();
        assert!((e[(0, 0)] - std::f32::consts::E).abs() < 1e-6);
    }

    #[test]
    fn large_norm_scalar_exponential() {
        let m = DMatrix::from_row_slice(1, 1, &[-50.0]);
        let e = matrix_exponential(&m).unwrap();
        assert_relative_eq!(e[(0, 0)], (-50.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn least_squares_recovers_exact_fit() {
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let b = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let sol = least_squares(&a, &b).unwrap();
        assert!(!sol.ridged);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn least_squares_ridges_collinear_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let b = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let sol = least_squares(&a, &b).unwrap();
        assert!(sol.ridged);
        assert!(((&a * &sol.x) - &b).norm() < 1e-6);
    }
}
