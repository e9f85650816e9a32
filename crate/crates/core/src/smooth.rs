//! Local polynomial regression of trajectories and their derivatives.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::RIDGE_CONDITION;
use crate::scalar::factorial;
use crate::systems::SampledData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKernel {
    #[default]
    Epanechnikov,
    Tricube,
}

impl WeightKernel {
    /// Weight at scaled distance `u`; zero for `|u| >= 1`.
    pub fn weight(self, u: f64) -> f64 {
        let a = u.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self {
            WeightKernel::Epanechnikov => 0.75 * (1.0 - u * u),
            WeightKernel::Tricube => {
                let c = 1.0 - a * a * a;
                70.0 / 81.0 * c * c * c
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothSpec {
    pub derivative_k: usize,
    pub poly_order_m: usize,
    pub bandwidth_h: f64,
    pub weight_kernel: WeightKernel,
}

impl SmoothSpec {
    /// Order `k` estimate with the default polynomial order `k + 1`.
    pub fn new(derivative_k: usize, bandwidth_h: f64) -> Self {
        SmoothSpec {
            derivative_k,
            poly_order_m: derivative_k + 1,
            bandwidth_h,
            weight_kernel: WeightKernel::Epanechnikov,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.poly_order_m < self.derivative_k {
            return invalid("polynomial order must be at least the derivative order");
        }
        if !(self.bandwidth_h > 0.0) || !self.bandwidth_h.is_finite() {
            return invalid("bandwidth must be positive");
        }
        Ok(())
    }
}

/// Linear smoother weights: the estimate at `t` is `sum_j w_j * y[index_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalWeights {
    pub start: usize,
    pub weights: Vec<f64>,
    pub ridged: bool,
}

impl LocalWeights {
    pub fn apply(&self, y: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&y[self.start..])
            .map(|(w, v)| w * v)
            .sum()
    }
}

/// Smoother weights of the order-`m` local polynomial estimate of `D^k X(t)`
/// from samples at sorted `times`.
pub fn local_poly_weights(times: &[f64], t: f64, spec: &SmoothSpec) -> Result<LocalWeights> {
    spec.validate()?;
    let h = spec.bandwidth_h;
    let lo = times.partition_point(|s| *s <= t - h);
    let hi = times.partition_point(|s| *s < t + h);
    local_weights_on(times, lo, hi, t, spec, |_| true)
}

fn local_weights_on(
    times: &[f64],
    lo: usize,
    hi: usize,
    t: f64,
    spec: &SmoothSpec,
    keep: impl Fn(usize) -> bool,
) -> Result<LocalWeights> {
    let (h, k, m) = (spec.bandwidth_h, spec.derivative_k, spec.poly_order_m);
    let dim = m + 1;
    let mut normal = DMatrix::<f64>::zeros(dim, dim);
    let mut kw = Vec::with_capacity(hi.saturating_sub(lo));
    let mut count = 0;
    let mut row = vec![0.0; dim];
    for j in lo..hi {
        let u = (times[j] - t) / h;
        let w = if keep(j) {
            spec.weight_kernel.weight(u)
        } else {
            0.0
        };
        kw.push(w);
        if w > 0.0 {
            count += 1;
            monomials(u, &mut row);
            for a in 0..dim {
                for b in 0..=a {
                    normal[(a, b)] += w * row[a] * row[b];
                }
            }
        }
    }
    if count < dim {
        return Err(Error::RankDeficient {
            t,
            count,
            needed: dim,
        });
    }
    for a in 0..dim {
        for b in 0..a {
            normal[(b, a)] = normal[(a, b)];
        }
    }
    let eig = SymmetricEigen::new(normal.clone());
    let (mut emin, mut emax) = (f64::INFINITY, 0.0f64);
    for e in eig.eigenvalues.iter() {
        emin = emin.min(e.abs());
        emax = emax.max(e.abs());
    }
    let ridged = !(emin > 0.0) || emax / emin > RIDGE_CONDITION;
    if ridged {
        let ridge = 1e-10 * normal.trace() / dim as f64;
        for a in 0..dim {
            normal[(a, a)] += ridge;
        }
    }
    let mut e_k = DVector::zeros(dim);
    e_k[k] = 1.0;
    let z = normal
        .cholesky()
        .ok_or(Error::Singular {
            context: "local polynomial normal equations".into(),
            condition: emax / emin,
        })?
        .solve(&e_k);
    let scale = factorial::<f64>(k) / h.powi(k as i32);
    let weights = kw
        .iter()
        .enumerate()
        .map(|(r, w)| {
            if *w > 0.0 {
                monomials((times[lo + r] - t) / h, &mut row);
                w * row.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>() * scale
            } else {
                0.0
            }
        })
        .collect();
    Ok(LocalWeights {
        start: lo,
        weights,
        ridged,
    })
}

fn monomials(u: f64, out: &mut [f64]) {
    let mut p = 1.0;
    for v in out.iter_mut() {
        *v = p;
        p *= u;
    }
}

/// Local polynomial estimate of `D^k X_i(t)`.
pub fn local_poly_fit(
    data: &SampledData,
    variable: usize,
    t: f64,
    spec: &SmoothSpec,
) -> Result<f64> {
    if variable >= data.dim() {
        return invalid("variable index out of range");
    }
    Ok(local_poly_weights(&data.times, t, spec)?.apply(&data.obs[variable]))
}

/// Grid estimates `est[i][k][h]` of `D^k X_i(grid[h])`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedCurves {
    pub grid: Vec<f64>,
    pub est: Vec<Vec<Vec<f64>>>,
    /// `bandwidths[i][k]`.
    pub bandwidths: Vec<Vec<f64>>,
    pub weight_kernel: WeightKernel,
}

impl SmoothedCurves {
    pub fn dim(&self) -> usize {
        self.est.len()
    }

    pub fn max_order(&self) -> usize {
        self.est.first().map_or(0, |v| v.len().saturating_sub(1))
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.est[i][0]
    }

    /// Wraps exact curves (e.g. solver output) in the smoothed-curve type.
    pub fn from_exact(grid: Vec<f64>, est: Vec<Vec<Vec<f64>>>) -> Self {
        let kk = est.first().map_or(0, |v| v.len());
        let p = est.len();
        SmoothedCurves {
            grid,
            est,
            bandwidths: vec![vec![0.0; kk]; p],
            weight_kernel: WeightKernel::Epanechnikov,
        }
    }
}

fn check_sorted(times: &[f64]) -> Result<()> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return invalid("observation times must be sorted");
    }
    Ok(())
}

/// Applies the local polynomial smoother for every variable, every
/// `k <= max_k` (polynomial order `k + 1`) and every grid point, with
/// `bandwidths[i][k]`.
pub fn smooth_curves(
    data: &SampledData,
    max_k: usize,
    grid: &[f64],
    bandwidths: &[Vec<f64>],
) -> Result<SmoothedCurves> {
    check_sorted(&data.times)?;
    let p = data.dim();
    if bandwidths.len() != p || bandwidths.iter().any(|b| b.len() <= max_k) {
        return invalid("need a bandwidth for every variable and derivative order");
    }
    let est = (0..p)
        .into_par_iter()
        .map(|i| {
            (0..=max_k)
                .map(|k| {
                    let spec = SmoothSpec::new(k, bandwidths[i][k]);
                    grid.iter()
                        .map(
                            |t| Ok(local_poly_weights(&data.times, *t, &spec)?.apply(&data.obs[i])),
                        )
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SmoothedCurves {
        grid: grid.to_vec(),
        est,
        bandwidths: bandwidths.iter().map(|b| b[..=max_k].to_vec()).collect(),
        weight_kernel: WeightKernel::Epanechnikov,
    })
}

/// `count` log-spaced bandwidths in `[2 * median spacing, C / 4]`.
pub fn default_candidates(times: &[f64], horizon: f64, count: usize) -> Vec<f64> {
    let mut gaps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if gaps.is_empty() {
        horizon
    } else {
        gaps[gaps.len() / 2]
    };
    let lo = (2.0 * median).min(horizon / 4.0);
    let hi = horizon / 4.0;
    if count <= 1 || hi <= lo {
        return vec![hi];
    }
    let ratio = (hi / lo).ln();
    (0..count)
        .map(|c| lo * (ratio * c as f64 / (count - 1) as f64).exp())
        .collect()
}

/// True when the order-`m` fit is identifiable at every grid point.
fn feasible_on_grid(times: &[f64], grid: &[f64], spec: &SmoothSpec) -> bool {
    let h = spec.bandwidth_h;
    grid.iter().all(|t| {
        let lo = times.partition_point(|s| *s <= t - h);
        let hi = times.partition_point(|s| *s < t + h);
        hi - lo > spec.poly_order_m
    })
}

/// Smallest candidate in a fine log grid for which the order-`k + 1` fit is
/// identifiable at every grid point.
pub fn min_feasible_bandwidth(times: &[f64], grid: &[f64], k: usize, horizon: f64) -> f64 {
    let mut h = default_candidates(times, horizon, 2)[0] / 8.0;
    while h < horizon && !feasible_on_grid(times, grid, &SmoothSpec::new(k, h)) {
        h *= 1.05;
    }
    h
}

/// Cross-validation scores `[candidate][variable]` of the level prediction
/// of the order-`k + 1` fit; `None` where the candidate is infeasible.
fn cv_scores(
    data: &SampledData,
    grid: &[f64],
    k: usize,
    candidates: &[f64],
    folds: usize,
) -> Vec<Option<Vec<f64>>> {
    let times = &data.times;
    let n = times.len();
    candidates
        .par_iter()
        .map(|h| {
            let spec = SmoothSpec {
                derivative_k: 0,
                ..SmoothSpec::new(k, *h)
            };
            if !feasible_on_grid(times, grid, &spec) {
                return None;
            }
            let mut sse = vec![0.0; data.dim()];
            for (j, t) in times.iter().enumerate() {
                let fold = j % folds;
                let lo = times.partition_point(|s| *s <= t - h);
                let hi = times.partition_point(|s| *s < t + h);
                let w = local_weights_on(times, lo, hi, *t, &spec, |r| r % folds != fold).ok()?;
                for (i, s) in sse.iter_mut().enumerate() {
                    let r = data.obs[i][j] - w.apply(&data.obs[i]);
                    *s += r * r;
                }
            }
            Some(sse.into_iter().map(|s| s / n as f64).collect())
        })
        .collect()
}

/// Fold-based cross-validated bandwidth for `D^k X_i`, scoring held-out
/// level predictions of the order-`k + 1` fit.
pub fn select_bandwidth(
    data: &SampledData,
    variable: usize,
    k: usize,
    candidates: &[f64],
    folds: usize,
) -> Result<f64> {
    if variable >= data.dim() {
        return invalid("variable index out of range");
    }
    let all = select_bandwidths(data, &data.times, k, candidates, folds)?;
    Ok(all[variable])
}

/// Cross-validated bandwidth of every variable at derivative order `k`.
/// Candidates that leave any point of `grid` without enough support are
/// skipped.
pub fn select_bandwidths(
    data: &SampledData,
    grid: &[f64],
    k: usize,
    candidates: &[f64],
    folds: usize,
) -> Result<Vec<f64>> {
    check_sorted(&data.times)?;
    if candidates.is_empty() || candidates.iter().any(|h| !(*h > 0.0)) {
        return invalid("bandwidth candidates must be non-empty and positive");
    }
    if folds < 2 {
        return invalid("need at least two folds");
    }
    let scores = cv_scores(data, grid, k, candidates, folds);
    (0..data.dim())
        .map(|i| {
            let mut best: Option<(f64, f64)> = None;
            for (h, s) in candidates.iter().zip(&scores) {
                if let Some(s) = s {
                    if best.is_none_or(|(_, b)| s[i] < b) {
                        best = Some((*h, s[i]));
                    }
                }
            }
            best.map(|(h, _)| h).ok_or(Error::RankDeficient {
                t: f64::NAN,
                count: 0,
                needed: k + 2,
            })
        })
        .collect()
}

/// How grid bandwidths are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Same bandwidth for every variable and order.
    Fixed(f64),
    Cv {
        folds: usize,
        candidates: usize,
        undersmooth: bool,
    },
}

impl Default for BandwidthRule {
    fn default() -> Self {
        BandwidthRule::Cv {
            folds: 5,
            candidates: 20,
            undersmooth: true,
        }
    }
}

impl std::str::FromStr for BandwidthRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "cv" {
            return Ok(BandwidthRule::default());
        }
        if let Some(h) = s.strip_prefix("fixed:") {
            let h: f64 = h
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad bandwidth '{s}'")))?;
            if h > 0.0 {
                return Ok(BandwidthRule::Fixed(h));
            }
        }
        invalid(format!("bandwidth must be 'cv' or 'fixed:<h>', got '{s}'"))
    }
}

/// Chooses `bandwidths[i][k]` for `k <= max_k` without undersmoothing.
pub fn choose_bandwidths(
    data: &SampledData,
    grid: &[f64],
    max_k: usize,
    rule: &BandwidthRule,
) -> Result<Vec<Vec<f64>>> {
    let p = data.dim();
    match rule {
        BandwidthRule::Fixed(h) => Ok(vec![vec![*h; max_k + 1]; p]),
        BandwidthRule::Cv {
            folds, candidates, ..
        } => {
            let cands = default_candidates(&data.times, data.horizon, *candidates);
            let mut out = vec![vec![0.0; max_k + 1]; p];
            for k in 0..=max_k {
                let hk = select_bandwidths(data, grid, k, &cands, *folds)?;
                for i in 0..p {
                    out[i][k] = hk[i];
                }
            }
            Ok(out)
        }
    }
}

/// Level bandwidths for Green's matching: under a CV rule with
/// undersmoothing, `h * n^(-1/10)`, clamped to `1.25` times the smallest
/// bandwidth that keeps every grid fit identifiable.
pub fn undersmoothed_level(
    data: &SampledData,
    grid: &[f64],
    level: &[f64],
    rule: &BandwidthRule,
) -> Vec<f64> {
    match rule {
        BandwidthRule::Cv {
            undersmooth: true, ..
        } => {
            let floor = 1.25 * min_feasible_bandwidth(&data.times, grid, 0, data.horizon);
            let factor = (data.len() as f64).powf(-0.1);
            level.iter().map(|h| (h * factor).max(floor)).collect()
        }
        _ => level.to_vec(),
    }
}

/// Residual variance of the level fit at the observation times,
/// `RSS / (n - tr L)`, together with `tr L`.
pub fn residual_variance(
    data: &SampledData,
    variable: usize,
    bandwidth: f64,
) -> Result<(f64, f64)> {
    let spec = SmoothSpec::new(0, bandwidth);
    let y = &data.obs[variable];
    let mut rss = 0.0;
    let mut trace = 0.0;
    for (j, t) in data.times.iter().enumerate() {
        let w = local_poly_weights(&data.times, *t, &spec)?;
        trace += w.weights[j - w.start];
        let r = y[j] - w.apply(y);
        rss += r * r;
    }
    let dof = (data.len() as f64 - trace).max(1.0);
    Ok((rss / dof, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::linspace;
    use crate::systems::Sampling;

    fn data_from(times: Vec<f64>, ys: Vec<Vec<f64>>) -> SampledData {
        let c = *times.last().unwrap();
        SampledData {
            noise_sigma: vec![0.0; ys.len()],
            obs: ys,
            times,
            gamma: 0.0,
            seed: 0,
            sampling: Sampling::Equispaced,
            horizon: c,
        }
    }

    fn dense_oracle(times: &[f64], y: &[f64], t: f64, spec: &SmoothSpec) -> f64 {
        // Plain normal equations on centred monomials (t_j - t)^v / v!.
        let m = spec.poly_order_m;
        let n = times.len();
        let mut x = DMatrix::zeros(n, m + 1);
        let mut w = DMatrix::zeros(n, n);
        for j in 0..n {
            let d = times[j] - t;
            for v in 0..=m {
                x[(j, v)] = d.powi(v as i32) / factorial::<f64>(v);
            }
            w[(j, j)] = spec.weight_kernel.weight(d / spec.bandwidth_h);
        }
        let xtw = x.transpose() * &w;
        let beta = (&xtw * &x)
            .lu()
            .solve(&(xtw * DVector::from_column_slice(y)))
            .unwrap();
        beta[spec.derivative_k]
    }

    #[test]
    fn reproduces_lines_and_parabolas() {
        let times = linspace(0.0, 10.0, 41);
        let line: Vec<f64> = times.iter().map(|t| 2.0 * t + 1.0).collect();
        let sq: Vec<f64> = times.iter().map(|t| t * t).collect();
        let d = data_from(times, vec![line, sq]);
        for t in [0.0, 1.3, 5.0, 10.0] {
            let v = local_poly_fit(&d, 0, t, &SmoothSpec::new(0, 0.9)).unwrap();
            assert!((v - (2.0 * t + 1.0)).abs() < 1e-12);
            let g = local_poly_fit(&d, 1, t, &SmoothSpec::new(1, 1.1)).unwrap();
            assert!((g - 2.0 * t).abs() < 1e-10);
        }
    }

    #[test]
    fn matches_dense_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut times: Vec<f64> = (0..80).map(|_| rng.random_range(0.0..5.0)).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let y: Vec<f64> = times
            .iter()
            .map(|t| t.sin() + rng.random_range(-0.3..0.3))
            .collect();
        let d = data_from(times.clone(), vec![y.clone()]);
        for k in 0..3 {
            for (t, h) in [(0.4, 0.8), (2.5, 0.6), (4.9, 1.2)] {
                let spec = SmoothSpec::new(k, h);
                let a = local_poly_fit(&d, 0, t, &spec).unwrap();
                let b = dense_oracle(&times, &y, t, &spec);
                assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()), "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_data() {
        let times = linspace(0.0, 4.0, 30);
        let d = data_from(times, vec![vec![3.5; 30]]);
        let grid = linspace(0.0, 4.0, 9);
        let s = smooth_curves(&d, 2, &grid, &[vec![0.6, 0.8, 1.0]]).unwrap();
        assert!(s.est[0][0].iter().all(|v| (v - 3.5).abs() < 1e-12));
        assert!(s.est[0][1].iter().all(|v| v.abs() < 1e-10));
        assert!(s.est[0][2].iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn too_few_points_is_an_error() {
        let d = data_from(vec![0.0, 1.0, 2.0, 3.0], vec![vec![0.0; 4]]);
        let err = local_poly_fit(&d, 0, 0.0, &SmoothSpec::new(1, 1.0)).unwrap_err();
        assert!(matches!(
            err,
            Error::RankDeficient {
                count: 1,
                needed: 3,
                ..
            }
        ));
    }

    #[test]
    fn repeated_times_trigger_ridge() {
        let times = vec![1.0, 1.0, 1.0, 1.0];
        let w = local_poly_weights(&times, 1.2, &SmoothSpec::new(0, 0.5)).unwrap();
        assert!(w.ridged);
        assert!(w.weights.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn bandwidth_parsing() {
        assert_eq!(
            "fixed:0.5".parse::<BandwidthRule>().unwrap(),
            BandwidthRule::Fixed(0.5)
        );
        assert!("cv".parse::<BandwidthRule>().is_ok());
        assert!("fixed:-1".parse::<BandwidthRule>().is_err());
        assert!("wide".parse::<BandwidthRule>().is_err());
    }

    #[test]
    fn candidates_span_requested_range() {
        let times = linspace(0.0, 20.0, 101);
        let c = default_candidates(&times, 20.0, 20);
        assert_eq!(c.len(), 20);
        assert!((c[0] - 0.4).abs() < 1e-12 && (c[19] - 5.0).abs() < 1e-12);
    }
}
