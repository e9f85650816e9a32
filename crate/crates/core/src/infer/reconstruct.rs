use crate::error::{invalid, Result};
use crate::matching::EstimateReport;
use crate::smooth::SmoothedCurves;
use crate::systems::{default_step, solve_from, DynamicSystem, TrajectorySet};

/// Forward-solves the system with the estimated parameters and operator,
/// started from the smoothed state at the first interior grid point and
/// integrated both ways to cover `grid`.
pub fn reconstruct_trajectories(
    report: &EstimateReport,
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    grid: &[f64],
) -> Result<TrajectorySet> {
    let kk = system.order;
    if smoothed.max_order() + 1 < kk {
        return invalid("reconstruction needs smoothed derivatives up to order K - 1");
    }
    if smoothed.grid.len() < 3 {
        return invalid("smoothed grid too short");
    }
    let start = 1;
    let initial: Vec<Vec<f64>> = (0..system.dim)
        .map(|i| (0..kk).map(|k| smoothed.est[i][k][start]).collect())
        .collect();
    solve_from(
        system,
        &report.beta,
        &report.omega,
        smoothed.grid[start],
        &initial,
        default_step(system),
        grid,
    )
}
