use greens_match::quadrature::linspace;
use greens_match::smooth::{local_poly_fit, smooth_curves, SmoothSpec};
use greens_match::systems::{SampledData, Sampling};
use proptest::prelude::*;

fn data_from(times: Vec<f64>, values: Vec<f64>) -> SampledData {
    SampledData {
        obs: vec![values],
        noise_sigma: vec![0.0],
        gamma: 0.0,
        seed: 0,
        sampling: Sampling::Equispaced,
        horizon: 10.0,
        times,
    }
}

fn times(n: usize, jitter: f64) -> Vec<f64> {
    let mut t = linspace(0.0, 10.0, n);
    for (j, v) in t.iter_mut().enumerate().skip(1).take(n - 2) {
        *v += jitter * ((j as f64 * 1.7).sin()) * 10.0 / n as f64;
    }
    t
}

fn poly(c: &[f64], t: f64, k: usize) -> f64 {
    // k-th derivative of sum_j c_j t^j
    let mut s = 0.0;
    for (j, cj) in c.iter().enumerate().skip(k) {
        let fall: f64 = (j - k + 1..=j).map(|v| v as f64).product();
        s += cj * fall * t.powi((j - k) as i32);
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reproduces_polynomials_of_degree_m(
        k in 0usize..=2,
        coefs in proptest::collection::vec(-1.0f64..1.0, 4),
        t in 2.0f64..8.0,
        h in 0.8f64..2.0,
        jitter in 0.0f64..0.4,
    ) {
        let m = k + 1;
        let c = &coefs[..=m];
        let ts = times(120, jitter);
        let ys = ts.iter().map(|s| poly(c, *s, 0)).collect();
        let data = data_from(ts, ys);
        let est = local_poly_fit(&data, 0, t, &SmoothSpec::new(k, h)).unwrap();
        let truth = poly(c, t, k);
        prop_assert!((est - truth).abs() < 1e-10 * truth.abs().max(1.0), "{est} vs {truth}");
    }

    #[test]
    fn linear_in_observations(
        k in 0usize..=2,
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        t in 1.0f64..9.0,
        seed in 0u64..500,
    ) {
        let ts = times(80, 0.3);
        let y1: Vec<f64> = ts.iter().map(|s| (s * 0.7 + seed as f64).sin()).collect();
        let y2: Vec<f64> = ts.iter().map(|s| (s * 1.3 - seed as f64).cos() + s).collect();
        let mix: Vec<f64> = y1.iter().zip(&y2).map(|(u, v)| a * u + b * v).collect();
        let spec = SmoothSpec::new(k, 1.5);
        let f = |y: &Vec<f64>| local_poly_fit(&data_from(ts.clone(), y.clone()), 0, t, &spec).unwrap();
        let lhs = f(&mix);
        let rhs = a * f(&y1) + b * f(&y2);
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn points_outside_the_window_do_not_matter(
        k in 0usize..=2,
        t in 2.0f64..8.0,
        h in 0.8f64..1.6,
        bump in -5.0f64..5.0,
    ) {
        let ts = times(100, 0.2);
        let ys: Vec<f64> = ts.iter().map(|s| s.sin()).collect();
        let spec = SmoothSpec::new(k, h);
        let base = local_poly_fit(&data_from(ts.clone(), ys.clone()), 0, t, &spec).unwrap();
        let moved: Vec<f64> = ts.iter().zip(&ys).map(|(s, y)| if (s - t).abs() >= h { y + bump } else { *y }).collect();
        let again = local_poly_fit(&data_from(ts, moved), 0, t, &spec).unwrap();
        prop_assert_eq!(base.to_bits(), again.to_bits());
    }
}

#[test]
fn line_and_parabola_examples() {
    let ts = linspace(0.0, 10.0, 60);
    let line = data_from(ts.clone(), ts.iter().map(|t| 2.0 * t + 1.0).collect());
    let spec = SmoothSpec {
        poly_order_m: 1,
        ..SmoothSpec::new(0, 1.1)
    };
    for t in [0.0, 3.3, 10.0] {
        assert!((local_poly_fit(&line, 0, t, &spec).unwrap() - (2.0 * t + 1.0)).abs() < 1e-12);
    }
    let par = data_from(ts.clone(), ts.iter().map(|t| t * t).collect());
    for t in [1.0, 5.5, 9.0] {
        assert!(
            (local_poly_fit(&par, 0, t, &SmoothSpec::new(1, 1.2)).unwrap() - 2.0 * t).abs() < 1e-10
        );
    }
}

#[test]
fn dense_noiseless_level_is_accurate() {
    let ts = linspace(0.0, 10.0, 2001);
    let data = data_from(ts.clone(), ts.iter().map(|t| (0.8 * t).sin()).collect());
    let grid = linspace(0.0, 10.0, 401);
    let sm = smooth_curves(&data, 0, &grid, &[vec![0.025]]).unwrap();
    let lo = grid.len() / 20;
    let err = (lo..grid.len() - lo)
        .map(|h| (sm.est[0][0][h] - (0.8 * grid[h]).sin()).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-4, "{err}");
}
