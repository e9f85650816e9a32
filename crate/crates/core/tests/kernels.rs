use greens_match::greens::{green_kernel, kernel_basis, poly_green_kernel, OperatorKernel};
use greens_match::linalg::matrix_exponential;
use greens_match::quadrature::linspace;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Truncated Taylor series of `exp(m)` with Kahan-compensated accumulation.
fn taylor_exp(m: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let n = m.nrows();
    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut comp = DMatrix::<f64>::zeros(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for j in 1..terms {
        term = &term * m / j as f64;
        for idx in 0..n * n {
            let y = term[idx] - comp[idx];
            let t = sum[idx] + y;
            comp[idx] = (t - sum[idx]) - y;
            sum[idx] = t;
        }
    }
    sum
}

#[test]
fn exponential_matches_taylor_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let m = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-2.0..2.0));
        let e = matrix_exponential(&m).unwrap();
        let oracle = taylor_exp(&m, 150);
        let scale = oracle.amax().max(1.0);
        assert!((e - &oracle).amax() / scale < 1e-10);
    }
}

/// Central-difference derivatives of order 0..=3 of `f` at `t`.
fn fd(f: &dyn Fn(f64) -> f64, t: f64, h: f64) -> [f64; 4] {
    let (m2, m1, z, p1, p2) = (f(t - 2.0 * h), f(t - h), f(t), f(t + h), f(t + 2.0 * h));
    [
        z,
        (p1 - m1) / (2.0 * h),
        (p1 - 2.0 * z + m1) / (h * h),
        (p2 - 2.0 * p1 + 2.0 * m1 - m2) / (2.0 * h * h * h),
    ]
}

fn omega_strategy() -> impl Strategy<Value = Vec<f64>> {
    (1usize..=3).prop_flat_map(|k| proptest::collection::vec(-1.1f64..1.1, k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn basis_is_annihilated(omega in omega_strategy(), t in 0.2f64..2.0) {
        let kk = omega.len();
        for j in 0..kk {
            let f = |s: f64| kernel_basis(&omega, s).unwrap()[j];
            let d = fd(&f, t, 2e-3);
            let mut r = d[kk];
            for (k, w) in omega.iter().enumerate() {
                r += w * d[k];
            }
            let scale = d.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            prop_assert!(r.abs() / scale < 1e-5, "order {kk} basis {j}: residual {r}");
        }
    }

    #[test]
    fn green_is_causal_with_unit_jump(omega in omega_strategy(), s in 0.0f64..3.0, lag in 0.01f64..2.0) {
        let kk = omega.len();
        prop_assert_eq!(green_kernel(&omega, s - lag, s).unwrap(), 0.0);
        // The state (G, DG, ..., D^{K-1} G) at t = s is the last unit vector.
        let op = OperatorKernel::new(&omega).unwrap();
        let start = op.propagator(0.0);
        for r in 0..kk {
            let expect = if r == kk - 1 { 1.0 } else { 0.0 };
            prop_assert!((start[(r, kk - 1)] - expect).abs() < 1e-15);
        }
        let eps = 1e-4;
        let lead = (1..kk).fold(1.0, |a, j| a * j as f64);
        let g = green_kernel(&omega, s + eps, s).unwrap();
        prop_assert!((g * lead / eps.powi(kk as i32 - 1) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zero_operator_matches_polynomial_kernel(k in 1usize..=4, t in -1.0f64..4.0, s in -1.0f64..4.0) {
        let g = green_kernel(&vec![0.0; k], t, s).unwrap();
        let p = poly_green_kernel(k, t, s).unwrap();
        prop_assert!((g - p).abs() < 1e-12);
    }

    #[test]
    fn exponential_semigroup(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let lhs = matrix_exponential(&(&m * (a + b))).unwrap();
        let rhs = matrix_exponential(&(&m * a)).unwrap() * matrix_exponential(&(&m * b)).unwrap();
        prop_assert!((lhs - rhs).amax() < 1e-10);
    }
}

#[test]
fn green_integral_solves_the_equation() {
    let grid = linspace(0.0, 5.0, 2001);
    let f = |t: f64| (1.3 * t).sin() + 0.2 * t * t;
    let fv = nalgebra::DVector::from_iterator(grid.len(), grid.iter().map(|t| f(*t)));
    let step = grid[1] - grid[0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for kk in 1..=3usize {
        for _ in 0..3 {
            let mut omega: Vec<f64> = (0..kk).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = omega.iter().map(|w| w * w).sum::<f64>().sqrt();
            if norm > 2.0 {
                omega.iter_mut().for_each(|w| *w *= 2.0 / norm);
            }
            let op = OperatorKernel::new(&omega).unwrap();
            let u = op.green_matrix(&grid) * &fv;
            let mut worst = 0.0f64;
            for h in 10..grid.len() - 10 {
                let d0 = u[h];
                let d1 = (u[h + 1] - u[h - 1]) / (2.0 * step);
                let d2 = (u[h + 1] - 2.0 * u[h] + u[h - 1]) / (step * step);
                let d3 =
                    (u[h + 2] - 2.0 * u[h + 1] + 2.0 * u[h - 1] - u[h - 2]) / (2.0 * step.powi(3));
                let d = [d0, d1, d2, d3];
                let mut r = d[kk] - f(grid[h]);
                for (k, w) in omega.iter().enumerate() {
                    r += w * d[k];
                }
                worst = worst.max(r.abs());
            }
            assert!(worst < 1e-3, "order {kk}, omega {omega:?}: {worst}");
        }
    }
}

#[test]
fn tabulated_values() {
    let b = kernel_basis::<f64>(&[0.0, 0.0], 3.0).unwrap();
    assert_eq!(b, vec![1.0, 3.0]);
    let b = kernel_basis(&[1.0, 0.0], std::f64::consts::PI).unwrap();
    assert!((b[0] + 1.0).abs() < 1e-12 && b[1].abs() < 1e-12);
    assert!((green_kernel::<f64>(&[0.0, 0.0], 2.0, 1.0).unwrap() - 1.0).abs() < 1e-14);
    assert!(
        (green_kernel::<f64>(&[1.0, 0.0], std::f64::consts::FRAC_PI_2, 0.0).unwrap() - 1.0).abs()
            < 1e-12
    );
    assert_eq!(poly_green_kernel::<f64>(1, 5.0, 1.0).unwrap(), 1.0);
    assert_eq!(poly_green_kernel::<f64>(3, 2.0, 0.0).unwrap(), 2.0);
    assert_eq!(poly_green_kernel::<f64>(2, 1.0, 3.0).unwrap(), 0.0);
    let e = kernel_basis(&[0.7], 1.5).unwrap();
    assert!((e[0] - (-0.7f64 * 1.5).exp()).abs() < 1e-14);
}
