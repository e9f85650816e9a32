//! Green's matching (known and unknown operators) and the gradient-matching
//! baselines of order `K` and `K - 1`.

mod design;
mod gauge;
mod solve;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use design::{
    build_design, matching_weights, DesignBlocks, EquationBlock, Integrator, NuisanceLayout,
};
pub(crate) use design::{drive_on_grid, pure_integrators as pure_integrators_for};
pub use gauge::{gauge_shift_check, GaugeShiftReport};
pub use solve::solve_design;
pub(crate) use solve::Projector;

use crate::error::{invalid, Error, Result};
use crate::smooth::SmoothedCurves;
use crate::systems::DynamicSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Greens,
    GradK,
    GradKm1,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Greens, Method::GradK, Method::GradKm1];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Greens => "greens",
            Method::GradK => "grad_k",
            Method::GradKm1 => "grad_km1",
        }
    }

    /// Highest derivative order of the pre-smoothed curves the method uses.
    pub fn smoothing_order(self, system_order: usize) -> usize {
        match self {
            Method::Greens => 0,
            Method::GradK => system_order,
            Method::GradKm1 => system_order - 1,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    /// Closed-form least squares for separable systems, Gauss-Newton otherwise.
    #[default]
    Auto,
    LeastSquares,
    GaussNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverPath {
    LeastSquares,
    GaussNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Fraction of `[0, C]` given zero weight at each end.
    pub trim: f64,
    /// Explicit grid weights; overrides `trim` when present.
    pub weights: Option<Vec<f64>>,
    pub solver: SolverChoice,
    pub gn_tol: f64,
    pub gn_max_iter: usize,
    /// Gauss-Newton starting point (zeros when absent).
    pub initial_beta: Option<Vec<f64>>,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            trim: 0.05,
            weights: None,
            solver: SolverChoice::Auto,
            gn_tol: 1e-8,
            gn_max_iter: 200,
            initial_beta: None,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.trim) {
            return invalid("trim must lie in [0, 0.5)");
        }
        if !(self.gn_tol > 0.0) || self.gn_max_iter == 0 {
            return invalid("Gauss-Newton tolerance and iteration cap must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub method: Method,
    pub path: SolverPath,
    pub beta: Vec<f64>,
    /// Operator coefficients `omega[i][k]`: estimated, or the known values.
    pub omega: Vec<Vec<f64>>,
    pub omega_estimated: bool,
    /// Nuisance coefficients per equation (`K` for Green's matching, one for
    /// order `K - 1` gradient matching, none for order `K`).
    pub alpha: Vec<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Largest condition number met in the least-squares solves.
    pub condition: f64,
    /// Profiled objective at the start and after every accepted
    /// Gauss-Newton step; a single value on the least-squares path.
    pub objective_trace: Vec<f64>,
}

impl EstimateReport {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        design: &DesignBlocks,
        beta: Vec<f64>,
        nus: &[DVector<f64>],
        objective: f64,
        iterations: usize,
        converged: bool,
        condition: f64,
        path: SolverPath,
    ) -> Self {
        let mut alpha = Vec::with_capacity(nus.len());
        let mut omega = design.system.operator.omega.clone();
        for (i, (b, nu)) in design.blocks.iter().zip(nus).enumerate() {
            alpha.push(nu.rows(0, b.nuisance.alpha).iter().copied().collect());
            if b.nuisance.omega > 0 {
                omega[i] = nu
                    .rows(b.nuisance.alpha, b.nuisance.omega)
                    .iter()
                    .copied()
                    .collect();
            }
        }
        EstimateReport {
            method: design.method,
            path,
            beta,
            omega,
            omega_estimated: design.omega_unknown,
            alpha,
            objective,
            iterations,
            converged,
            condition,
            objective_trace: vec![objective],
        }
    }

    /// `beta`, followed by the flattened `omega` when it was estimated.
    pub fn estimates(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        if self.omega_estimated {
            v.extend(self.omega.iter().flatten().copied());
        }
        v
    }
}

/// Builds the design and solves it.
pub fn estimate(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    method: Method,
    cfg: &MatchConfig,
) -> Result<EstimateReport> {
    cfg.validate()?;
    let design = build_design(smoothed, system, method, cfg)?;
    solve_design(&design, cfg)
}

/// Green's matching with the operator coefficients estimated alongside
/// `beta`, using the kernels and basis of `D^K`.
pub fn greens_match_unknown_op(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    cfg: &MatchConfig,
) -> Result<EstimateReport> {
    estimate(
        smoothed,
        &system.with_operator_known(false),
        Method::Greens,
        cfg,
    )
}

/// Green's matching with the basis and Green's function of the known
/// operator.
pub fn greens_match_known_op(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    cfg: &MatchConfig,
) -> Result<EstimateReport> {
    if !system.operator.known {
        return invalid("operator coefficients are flagged unknown");
    }
    estimate(smoothed, system, Method::Greens, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientOrder {
    K,
    KMinus1,
}

pub fn gradient_match(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    order: GradientOrder,
    cfg: &MatchConfig,
) -> Result<EstimateReport> {
    let method = match order {
        GradientOrder::K => Method::GradK,
        GradientOrder::KMinus1 => Method::GradKm1,
    };
    estimate(smoothed, system, method, cfg)
}
