//! Plug-in covariance and confidence intervals, trajectory reconstruction
//! and Monte Carlo error metrics.

mod covariance;
mod intervals;
mod metrics;
mod reconstruct;

pub use covariance::{asymptotic_covariance, design_density, CovarianceMode, CovarianceReport};
pub use intervals::{confidence_intervals, normal_intervals, Interval};
pub use metrics::{compute_metrics, MetricsRow};
pub use reconstruct::reconstruct_trajectories;
