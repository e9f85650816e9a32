use statrs::distribution::{ContinuousCDF, Normal};

use super::CovarianceReport;
use crate::error::{invalid, Result};
use crate::matching::EstimateReport;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Normal-theory intervals `est ± z se` for arbitrary estimates.
pub fn normal_intervals(estimates: &[f64], se: &[f64], level: f64) -> Result<Vec<Interval>> {
    if !(level > 0.0 && level < 1.0) {
        return invalid("confidence level must lie in (0, 1)");
    }
    if estimates.len() != se.len() {
        return invalid("one standard error per estimate is required");
    }
    let z = Normal::standard().inverse_cdf(0.5 * (1.0 + level));
    Ok(estimates
        .iter()
        .zip(se)
        .map(|(e, s)| Interval {
            lo: e - z * s,
            hi: e + z * s,
        })
        .collect())
}

/// Intervals for every estimand of the report (`beta`, then `omega` when
/// estimated).
pub fn confidence_intervals(
    report: &EstimateReport,
    covariance: &CovarianceReport,
    level: f64,
) -> Result<Vec<Interval>> {
    normal_intervals(&report.estimates(), &covariance.se, level)
}
