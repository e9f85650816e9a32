use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Relative accuracy of repeated estimates, in percent, averaged over
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub rrmse: f64,
    pub rbias: f64,
    pub rsd: f64,
}

/// RRMSE, RBIAS and RSD of `estimates[g][l]` against `truth[l]`. Each
/// parameter's error is scaled by `|truth[l]|`.
pub fn compute_metrics(
    estimates: &[Vec<f64>],
    truth: &[f64],
    names: &[String],
) -> Result<MetricsRow> {
    let g = estimates.len();
    let m = truth.len();
    if g == 0 || m == 0 {
        return invalid("metrics need at least one replication and one parameter");
    }
    if estimates.iter().any(|e| e.len() != m) {
        return invalid("every replication must estimate every parameter");
    }
    if let Some(l) = truth.iter().position(|b| *b == 0.0) {
        let name = names.get(l).cloned().unwrap_or_else(|| format!("#{l}"));
        return Err(Error::ZeroTruth(name));
    }
    let gf = g as f64;
    let (mut rrmse, mut rbias, mut rsd) = (0.0, 0.0, 0.0);
    for (l, b) in truth.iter().enumerate() {
        let mean = estimates.iter().map(|e| e[l]).sum::<f64>() / gf;
        let mse = estimates.iter().map(|e| (e[l] - b).powi(2)).sum::<f64>() / gf;
        let var = estimates.iter().map(|e| (e[l] - mean).powi(2)).sum::<f64>() / gf;
        rrmse += mse.sqrt() / b.abs();
        rbias += ((b - mean) / b).abs();
        rsd += var.sqrt() / b.abs();
    }
    let scale = 100.0 / m as f64;
    Ok(MetricsRow {
        rrmse: rrmse * scale,
        rbias: rbias * scale,
        rsd: rsd * scale,
    })
}
