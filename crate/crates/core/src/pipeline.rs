//! Simulate, smooth and estimate: one Monte Carlo replication.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::matching::{estimate, EstimateReport, MatchConfig, Method};
use crate::quadrature::linspace;
use crate::smooth::{
    choose_bandwidths, smooth_curves, undersmoothed_level, BandwidthRule, SmoothedCurves,
};
use crate::systems::{
    default_step, simulate_observations, solve_forward, DynamicSystem, SampledData, Sampling,
    TrajectorySet,
};

/// Pre-smoothing options shared by all methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothingOptions {
    pub bandwidth: BandwidthRule,
    /// Requested number of grid points; raised until drive breakpoints fall on
    /// grid nodes.
    pub grid_points: usize,
}

impl Default for SmoothingOptions {
    fn default() -> Self {
        SmoothingOptions {
            bandwidth: BandwidthRule::default(),
            grid_points: 401,
        }
    }
}

/// Smallest `H' >= H` for which every breakpoint of the system lies on the
/// equispaced grid of `H'` points over `[0, C]`.
pub fn aligned_grid_size(system: &DynamicSystem, requested: usize) -> usize {
    let c = system.horizon;
    let fits = |n: usize| {
        system.breakpoints.iter().all(|b| {
            let pos = b / c * (n - 1) as f64;
            (pos - pos.round()).abs() < 1e-9
        })
    };
    (requested.max(2)..requested.max(2) + 10_000)
        .find(|n| fits(*n))
        .unwrap_or(requested.max(2))
}

pub fn estimation_grid(system: &DynamicSystem, requested: usize) -> Vec<f64> {
    linspace(0.0, system.horizon, aligned_grid_size(system, requested))
}

/// Fine reference trajectory used to generate observations.
pub fn reference_trajectory(system: &DynamicSystem) -> Result<TrajectorySet> {
    let grid = linspace(0.0, system.horizon, aligned_grid_size(system, 4001));
    solve_forward(system, default_step(system), &grid)
}

/// Smoothed curves for each method: Green's matching uses the (optionally
/// undersmoothed) level only, gradient matching uses the CV bandwidths up to
/// its derivative order.
#[derive(Debug, Clone)]
pub struct PreSmoothed {
    pub level_only: Option<SmoothedCurves>,
    pub derivatives: Option<SmoothedCurves>,
}

impl PreSmoothed {
    pub fn for_method(&self, method: Method) -> &SmoothedCurves {
        match method {
            Method::Greens => self.level_only.as_ref().expect("level smoothing requested"),
            _ => self
                .derivatives
                .as_ref()
                .expect("derivative smoothing requested"),
        }
    }
}

pub fn presmooth(
    data: &SampledData,
    system: &DynamicSystem,
    methods: &[Method],
    opts: &SmoothingOptions,
) -> Result<PreSmoothed> {
    let grid = estimation_grid(system, opts.grid_points);
    let max_k = methods
        .iter()
        .map(|m| m.smoothing_order(system.order))
        .max()
        .unwrap_or(0);
    let plain = choose_bandwidths(data, &grid, max_k, &opts.bandwidth)?;
    let level_only = if methods.contains(&Method::Greens) {
        let level: Vec<f64> = plain.iter().map(|b| b[0]).collect();
        let h0 = undersmoothed_level(data, &grid, &level, &opts.bandwidth);
        let bw: Vec<Vec<f64>> = h0.into_iter().map(|h| vec![h]).collect();
        Some(smooth_curves(data, 0, &grid, &bw)?)
    } else {
        None
    };
    let derivatives = if methods.iter().any(|m| *m != Method::Greens) {
        Some(smooth_curves(data, max_k, &grid, &plain)?)
    } else {
        None
    };
    Ok(PreSmoothed {
        level_only,
        derivatives,
    })
}

#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub report: std::result::Result<EstimateReport, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct Replication {
    pub seed: u64,
    pub data: SampledData,
    pub smoothed: PreSmoothed,
    pub outcomes: Vec<MethodOutcome>,
}

/// Observation settings of a replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    pub n: usize,
    pub gamma: f64,
    pub sampling: Sampling,
}

/// Samples the reference trajectory, smooths, and runs every method.
/// Estimation failures are recorded per method instead of aborting.
pub fn run_replication(
    system: &DynamicSystem,
    truth: &TrajectorySet,
    plan: SamplingPlan,
    seed: u64,
    methods: &[Method],
    smoothing: &SmoothingOptions,
    matching: &MatchConfig,
) -> Result<Replication> {
    if methods.is_empty() {
        return invalid("no estimation methods selected");
    }
    let data = simulate_observations(truth, system, plan.n, plan.gamma, plan.sampling, seed)?;
    estimate_on_data(system, data, methods, smoothing, matching)
}

/// Smooths given observations and runs every method on them.
pub fn estimate_on_data(
    system: &DynamicSystem,
    data: SampledData,
    methods: &[Method],
    smoothing: &SmoothingOptions,
    matching: &MatchConfig,
) -> Result<Replication> {
    if methods.is_empty() {
        return invalid("no estimation methods selected");
    }
    if data.dim() != system.dim {
        return invalid(format!(
            "data has {} variables, system `{}` has {}",
            data.dim(),
            system.name,
            system.dim
        ));
    }
    let start = Instant::now();
    let smoothed = presmooth(&data, system, methods, smoothing)?;
    let smooth_secs = start.elapsed().as_secs_f64();
    let n_methods = methods.len() as f64;
    let outcomes = methods
        .iter()
        .map(|m| {
            let t0 = Instant::now();
            let report =
                estimate(smoothed.for_method(*m), system, *m, matching).map_err(|e| e.to_string());
            MethodOutcome {
                method: *m,
                report,
                seconds: t0.elapsed().as_secs_f64() + smooth_secs / n_methods,
            }
        })
        .collect();
    Ok(Replication {
        seed: data.seed,
        data,
        smoothed,
        outcomes,
    })
}
