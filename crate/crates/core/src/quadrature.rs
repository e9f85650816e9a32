//! Composite trapezoid rules on (possibly non-uniform) grids.

use nalgebra::DMatrix;

use crate::scalar::{lit, Scalar};

/// Trapezoid weights for integrating over the whole grid.
pub fn trapezoid_weights<T: Scalar>(grid: &[T]) -> Vec<T> {
    let n = grid.len();
    let mut w = vec![T::zero(); n];
    let half = lit::<T>(0.5);
    for j in 1..n {
        let d = (grid[j] - grid[j - 1]) * half;
        w[j - 1] += d;
        w[j] += d;
    }
    w
}

pub fn trapezoid<T: Scalar>(grid: &[T], values: &[T]) -> T {
    trapezoid_weights(grid)
        .iter()
        .zip(values)
        .fold(T::zero(), |acc, (w, v)| acc + *w * *v)
}

/// Running integral `int_{grid[0]}^{grid[h]} values` for every `h`.
pub fn cumulative_trapezoid<T: Scalar>(grid: &[T], values: &[T]) -> Vec<T> {
    let half = lit::<T>(0.5);
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = T::zero();
    for j in 0..grid.len() {
        if j > 0 {
            acc += (grid[j] - grid[j - 1]) * (values[j] + values[j - 1]) * half;
        }
        out.push(acc);
    }
    out
}

/// Quadrature matrix for causal kernels: row `h` integrates
/// `kernel(grid[h], s) q(s)` over `s` in `[grid[0], grid[h]]` with the
/// trapezoid rule truncated at `grid[h]`, so `(W q)_h` approximates
/// `int_0^{t_h} kernel(t_h, s) q(s) ds`.
pub fn causal_kernel_matrix<T, F>(grid: &[T], kernel: F) -> DMatrix<T>
where
    T: Scalar,
    F: Fn(T, T) -> T,
{
    let n = grid.len();
    let half = lit::<T>(0.5);
    let mut w = DMatrix::zeros(n, n);
    for h in 1..n {
        let th = grid[h];
        for j in 0..=h {
            let left = if j > 0 {
                grid[j] - grid[j - 1]
            } else {
                T::zero()
            };
            let right = if j < h {
                grid[j + 1] - grid[j]
            } else {
                T::zero()
            };
            w[(h, j)] = (left + right) * half * kernel(th, grid[j]);
        }
    }
    w
}

/// Running-integral operator as a matrix (kernel identically one).
pub fn cumulative_matrix<T: Scalar>(grid: &[T]) -> DMatrix<T> {
    causal_kernel_matrix(grid, |_, _| T::one())
}

/// `n` equispaced points on `[a, b]`, endpoints included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n)
            .map(|j| a + (b - a) * j as f64 / (n - 1) as f64)
            .collect(),
    }
}
