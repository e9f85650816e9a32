use std::sync::Arc;

use nalgebra::DMatrix;

use super::design::{build_green_unknown, pure_integrators};
use super::{solve_design, EstimateReport, MatchConfig};
use crate::error::Result;
use crate::greens::poly_basis;
use crate::quadrature::trapezoid_weights;
use crate::smooth::SmoothedCurves;
use crate::systems::DynamicSystem;

#[derive(Debug, Clone)]
pub struct GaugeShiftReport {
    pub original: EstimateReport,
    pub shifted: EstimateReport,
    pub max_beta_diff: f64,
    pub max_omega_diff: f64,
    /// `alpha' - alpha` per equation.
    pub alpha_shift: Vec<Vec<f64>>,
    /// Shift predicted from the estimates:
    /// `sum_k omega_k int u_{K-k} X - int u_K f`.
    pub predicted_shift: Vec<Vec<f64>>,
}

/// Re-estimates the unknown-operator Green's matching problem with every
/// `G_k(t, s)` replaced by `G_k(t, s) + psi(t)^T u_k(s)` and compares.
/// `u(k, s)` returns the `K`-vector `u_k(s)` for `k = 1..=K`.
pub fn gauge_shift_check(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    cfg: &MatchConfig,
    u: impl Fn(usize, f64) -> Vec<f64>,
) -> Result<GaugeShiftReport> {
    let system = system.with_operator_known(false);
    let grid = &smoothed.grid;
    let kk = system.order;
    let base = pure_integrators(kk, grid);
    let q = trapezoid_weights(grid);
    let basis: Vec<Vec<f64>> = grid.iter().map(|t| poly_basis::<f64>(kk, *t)).collect();
    let uk: Vec<Vec<Vec<f64>>> = (1..=kk)
        .map(|k| grid.iter().map(|s| u(k, *s)).collect())
        .collect();
    let shifted: Vec<Arc<DMatrix<f64>>> = base
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let mut m = w.as_ref().clone();
            for (h, b) in basis.iter().enumerate() {
                for (j, uj) in uk[k].iter().enumerate() {
                    let add: f64 = b.iter().zip(uj).map(|(x, y)| x * y).sum();
                    m[(h, j)] += add * q[j];
                }
            }
            Arc::new(m)
        })
        .collect();

    let d0 = build_green_unknown(smoothed, &system, cfg, &base)?;
    let d1 = build_green_unknown(smoothed, &system, cfg, &shifted)?;
    let original = solve_design(&d0, cfg)?;
    let shifted_report = solve_design(&d1, cfg)?;

    let max_beta_diff = original
        .beta
        .iter()
        .zip(&shifted_report.beta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let max_omega_diff = original
        .omega
        .iter()
        .flatten()
        .zip(shifted_report.omega.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let alpha_shift = original
        .alpha
        .iter()
        .zip(&shifted_report.alpha)
        .map(|(a, b)| b.iter().zip(a).map(|(x, y)| x - y).collect())
        .collect();

    let f = d0.drive_on_grid(&original.beta);
    let moment = |k: usize, v: &[f64]| -> Vec<f64> {
        (0..kk)
            .map(|c| {
                uk[k - 1]
                    .iter()
                    .zip(v)
                    .zip(&q)
                    .map(|((u, x), w)| u[c] * x * w)
                    .sum()
            })
            .collect()
    };
    let predicted_shift = (0..system.dim)
        .map(|i| {
            let fi: Vec<f64> = f[i].iter().copied().collect();
            let mut s: Vec<f64> = moment(kk, &fi).into_iter().map(|v| -v).collect();
            for k in 0..kk {
                let c = moment(kk - k, &d0.xhat[i]);
                for (sv, cv) in s.iter_mut().zip(c) {
                    *sv += original.omega[i][k] * cv;
                }
            }
            s
        })
        .collect();
    Ok(GaugeShiftReport {
        original,
        shifted: shifted_report,
        max_beta_diff,
        max_omega_diff,
        alpha_shift,
        predicted_shift,
    })
}
