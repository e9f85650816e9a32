//! Kernel-space bases and Green's functions of constant-coefficient linear
//! differential operators `D^K + sum_k omega_k D^k`.
//!
//! The basis of the operator's kernel is the first row of `exp(t A(omega))`,
//! where `A` is the companion matrix, and the causal Green's function is the
//! `(1, K)` entry of `exp((t - s) A)` for `t >= s`.

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::linalg::matrix_exponential;
use crate::quadrature::causal_kernel_matrix;
use crate::scalar::{factorial, Scalar};

/// Companion matrix of `D^K + sum_k omega_k D^k`: ones on the superdiagonal
/// and `-omega` in the last row, so that `D psi = A psi` for the state
/// `psi = (u, Du, ..., D^{K-1} u)`.
pub fn companion_matrix<T: Scalar>(omega: &[T]) -> Result<DMatrix<T>> {
    let k = omega.len();
    if k == 0 {
        return invalid("operator order must be at least 1");
    }
    let mut a = DMatrix::zeros(k, k);
    for r in 0..k - 1 {
        a[(r, r + 1)] = T::one();
    }
    for (c, w) in omega.iter().enumerate() {
        a[(k - 1, c)] = -*w;
    }
    Ok(a)
}

/// A linear differential operator together with its companion matrix.
#[derive(Debug, Clone)]
pub struct OperatorKernel<T: Scalar> {
    omega: Vec<T>,
    companion: DMatrix<T>,
}

impl<T: Scalar> OperatorKernel<T> {
    pub fn new(omega: &[T]) -> Result<Self> {
        Ok(Self {
            omega: omega.to_vec(),
            companion: companion_matrix(omega)?,
        })
    }

    /// Operator `D^K` (all lower-order coefficients zero).
    pub fn pure_derivative(order: usize) -> Result<Self> {
        Self::new(&vec![T::zero(); order])
    }

    pub fn order(&self) -> usize {
        self.omega.len()
    }

    pub fn omega(&self) -> &[T] {
        &self.omega
    }

    pub fn companion(&self) -> &DMatrix<T> {
        &self.companion
    }

    pub fn propagator(&self, t: T) -> DMatrix<T> {
        matrix_exponential(&(&self.companion * t)).expect("companion matrix is square and finite")
    }

    /// Kernel-space basis `psi(t)`, the first row of `exp(t A)`.
    pub fn basis(&self, t: T) -> Vec<T> {
        let e = self.propagator(t);
        e.row(0).iter().copied().collect()
    }

    pub fn green(&self, t: T, s: T) -> T {
        if t < s {
            return T::zero();
        }
        let e = self.propagator(t - s);
        e[(0, self.order() - 1)]
    }

    /// Basis evaluated on a grid, one row per grid point.
    pub fn basis_matrix(&self, grid: &[T]) -> DMatrix<T> {
        let k = self.order();
        let mut m = DMatrix::zeros(grid.len(), k);
        for (h, t) in grid.iter().enumerate() {
            let b = self.basis(*t);
            for c in 0..k {
                m[(h, c)] = b[c];
            }
        }
        m
    }

    /// Causal quadrature matrix whose row `h` approximates
    /// `int_0^{t_h} G(t_h, s) q(s) ds`. `G` depends on `t - s` only, so one
    /// exponential per distinct lag is computed.
    pub fn green_matrix(&self, grid: &[T]) -> DMatrix<T> {
        let n = grid.len();
        let mut table = DMatrix::zeros(n, n);
        if is_equispaced(grid) {
            let by_lag: Vec<T> = (0..n)
                .map(|d| self.green(grid[d] - grid[0], T::zero()))
                .collect();
            for h in 0..n {
                for j in 0..=h {
                    table[(h, j)] = by_lag[h - j];
                }
            }
        } else {
            for h in 0..n {
                for j in 0..=h {
                    table[(h, j)] = self.green(grid[h], grid[j]);
                }
            }
        }
        causal_kernel_matrix(grid, |_, _| T::one()).component_mul(&table)
    }
}

pub(crate) fn is_equispaced<T: Scalar>(grid: &[T]) -> bool {
    if grid.len() < 3 {
        return true;
    }
    let d = grid[1] - grid[0];
    let tol = d * T::from_f64(1e-9).unwrap();
    grid.windows(2).all(|w| ((w[1] - w[0]) - d).abs() <= tol)
}

pub fn kernel_basis<T: Scalar>(omega: &[T], t: T) -> Result<Vec<T>> {
    Ok(OperatorKernel::new(omega)?.basis(t))
}

pub fn green_kernel<T: Scalar>(omega: &[T], t: T, s: T) -> Result<T> {
    Ok(OperatorKernel::new(omega)?.green(t, s))
}

/// Green's function of `D^k`: `(t - s)^{k-1} / (k-1)!` for `t >= s`.
pub fn poly_green_kernel<T: Scalar>(k: usize, t: T, s: T) -> Result<T> {
    if k < 1 {
        return invalid("poly_green_kernel needs k >= 1");
    }
    Ok(poly_green(k, t, s))
}

#[inline]
pub(crate) fn poly_green<T: Scalar>(k: usize, t: T, s: T) -> T {
    if t < s {
        return T::zero();
    }
    let d = t - s;
    let mut p = T::one();
    for _ in 1..k {
        p *= d;
    }
    p / factorial::<T>(k - 1)
}

/// Basis `(1, t, ..., t^{K-1}/(K-1)!)` of `Ker(D^K)`.
pub fn poly_basis<T: Scalar>(order: usize, t: T) -> Vec<T> {
    let mut out = Vec::with_capacity(order);
    let mut term = T::one();
    for j in 0..order {
        if j > 0 {
            term = term * t / T::from_usize(j).unwrap();
        }
        out.push(term);
    }
    out
}

/// Quadrature matrix for `G_k` of the pure derivative `D^k`.
pub fn poly_green_matrix<T: Scalar>(k: usize, grid: &[T]) -> DMatrix<T> {
    causal_kernel_matrix(grid, |t, s| poly_green(k, t, s))
}
