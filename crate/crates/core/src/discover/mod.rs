//! Sparse discovery of a one-dimensional second-order drive over a library of
//! candidate functions, with vector-field comparison against the truth.

mod lasso;
mod library;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use lasso::{lambda_grid, Lasso, LassoConfig, LassoFit};
pub use library::{CandidateLibrary, FeatureFn1};

use crate::error::{invalid, Error, Result};
use crate::linalg::least_squares;
use crate::matching::{build_design, MatchConfig, Method, Projector};
use crate::pipeline::{presmooth, reference_trajectory, SmoothingOptions};
use crate::smooth::SmoothedCurves;
use crate::systems::{
    simulate_observations, solve_from, DynamicSystem, OperatorCoeffs, ParamLayout, SampledData,
    Sampling, SeparableForm,
};

/// `D^2 X = g(X)^T beta` with `g` the library, zero initial operator terms.
pub fn library_system(
    library: &CandidateLibrary,
    beta: &[f64],
    initial: [f64; 2],
    horizon: f64,
) -> DynamicSystem {
    let lib = library.clone();
    let lib2 = library.clone();
    DynamicSystem {
        name: "library".into(),
        dim: 1,
        order: 2,
        horizon,
        drive: Arc::new(move |x: &[f64], _t: f64, b: &[f64], out: &mut [f64]| {
            out[0] = lib.combine(x[0], b);
        }),
        separable: Some(SeparableForm {
            terms: vec![(0..library.len()).collect()],
            eval: Arc::new(move |_i: usize, x: &[f64], _t: f64, out: &mut [f64]| {
                lib2.eval_into(x[0], out);
                0.0
            }),
        }),
        params: ParamLayout {
            names: library.names().to_vec(),
            truth: beta.to_vec(),
        },
        operator: OperatorCoeffs {
            omega: vec![vec![0.0, 0.0]],
            known: true,
            names: vec![vec!["omega_0".into(), "omega_1".into()]],
        },
        initial: vec![initial.to_vec()],
        breakpoints: vec![],
    }
}

/// How the penalty level is chosen along the path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// BIC of the observations against the trajectory obtained by solving
    /// the fitted equation: `n log(RSS / n) + df log n`.
    #[default]
    Trajectory,
    /// BIC of the matching residuals on the grid: `H log(RSS / H) + df log H`.
    Matching,
}

/// Regularization path and selection settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathConfig {
    pub count: usize,
    /// `lambda_min / lambda_max`.
    pub ratio: f64,
    /// Append `lambda = 0` (least squares) to the path. It is reported but
    /// never selected.
    pub include_zero: bool,
    pub selection: Selection,
    /// Score each support by its unpenalized refit instead of the shrunken
    /// path coefficients.
    pub refit: bool,
    /// Report the refit coefficients of the selected support.
    pub report_refit: bool,
    /// Refit each support's coefficients and initial state to the
    /// observations before scoring its trajectory.
    pub optimize_trajectory: bool,
    /// The sparsest path point whose score is within this margin of the
    /// minimum is selected.
    pub bic_margin: f64,
    pub lasso: LassoConfig,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            count: 50,
            ratio: 1e-4,
            include_zero: true,
            selection: Selection::Trajectory,
            refit: true,
            report_refit: false,
            bic_margin: 0.0,
            optimize_trajectory: false,
            lasso: LassoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryResult {
    pub method: Method,
    pub names: Vec<String>,
    /// Decreasing, ending at zero when included.
    pub lambdas: Vec<f64>,
    pub beta_path: Vec<Vec<f64>>,
    pub bic: Vec<f64>,
    pub selected: usize,
    pub selected_lambda: f64,
    pub selected_beta: Vec<f64>,
    pub support: Vec<String>,
}

/// Weighted matching rows of a discovery design, before and after projecting
/// out the unpenalized kernel-space columns.
#[derive(Debug, Clone)]
pub struct DiscoveryProblem {
    pub psi: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub x_proj: DMatrix<f64>,
    pub y_proj: DVector<f64>,
    /// Grid nodes with positive weight, in row order.
    pub rows: Vec<usize>,
}

impl DiscoveryProblem {
    /// Kernel-space coefficients profiled at `beta`.
    pub fn nuisance(&self, beta: &[f64]) -> Result<DVector<f64>> {
        let r = &self.y - &self.x * DVector::from_column_slice(beta);
        Ok(least_squares(&self.psi, &r)?.x)
    }

    /// Unpenalized fit on the support of `coef`, with its residual sum of
    /// squares.
    pub fn refit(&self, coef: &DVector<f64>) -> Result<(Vec<f64>, f64)> {
        let support: Vec<usize> = (0..coef.len()).filter(|j| coef[*j] != 0.0).collect();
        let mut beta = vec![0.0; coef.len()];
        if support.is_empty() {
            return Ok((beta, self.y_proj.norm_squared()));
        }
        let xs = DMatrix::from_fn(self.x_proj.nrows(), support.len(), |r, c| {
            self.x_proj[(r, support[c])]
        });
        let b = least_squares(&xs, &self.y_proj)?.x;
        let rss = (&self.y_proj - &xs * &b).norm_squared();
        for (c, j) in support.iter().enumerate() {
            beta[*j] = b[c];
        }
        Ok((beta, rss))
    }
}

/// Weighted, nuisance-projected lasso problem of a matching design.
pub fn discovery_problem(
    smoothed: &SmoothedCurves,
    library: &CandidateLibrary,
    method: Method,
    cfg: &MatchConfig,
) -> Result<DiscoveryProblem> {
    if smoothed.dim() != 1 {
        return invalid("discovery expects a one-dimensional state");
    }
    let horizon = *smoothed.grid.last().unwrap();
    let sys = library_system(library, &vec![0.0; library.len()], [0.0, 0.0], horizon);
    let design = build_design(smoothed, &sys, method, cfg)?;
    let keep: Vec<usize> = (0..design.grid.len())
        .filter(|h| design.weights[*h] > 0.0)
        .collect();
    let b = &design.blocks[0];
    let phi = b.phi.as_ref().expect("library system is separable");
    let off = b.phi_offset.as_ref().expect("library system is separable");
    let sw: Vec<f64> = keep.iter().map(|h| design.weights[*h].sqrt()).collect();
    let rows = keep.len();
    let psi = DMatrix::from_fn(rows, b.psi.ncols(), |r, c| sw[r] * b.psi[(keep[r], c)]);
    let x = DMatrix::from_fn(rows, phi.ncols(), |r, c| sw[r] * phi[(keep[r], c)]);
    let y = DVector::from_fn(rows, |r, _| sw[r] * (b.z[keep[r]] - off[keep[r]]));
    let proj = Projector::new(&psi);
    let (x_proj, y_proj) = (proj.residual_matrix(&x), proj.residual(&y));
    Ok(DiscoveryProblem {
        psi,
        x,
        y,
        x_proj,
        y_proj,
        rows: keep,
    })
}

/// `H log(RSS / H) + df log H`.
pub fn bic(rss: f64, df: usize, rows: usize) -> f64 {
    let h = rows as f64;
    h * (rss.max(f64::MIN_POSITIVE) / h).ln() + df as f64 * h.ln()
}

fn run_path(x: &DMatrix<f64>, y: &DVector<f64>, cfg: &PathConfig) -> Result<Vec<LassoFit>> {
    let lasso = Lasso::new(x, y, cfg.lasso)?;
    if !(lasso.lambda_max() > 0.0) {
        return invalid("response is orthogonal to every candidate feature");
    }
    let mut fits = Vec::with_capacity(cfg.count + 1);
    let mut warm = DVector::zeros(lasso.num_features());
    for lam in lambda_grid(lasso.lambda_max(), cfg.count, cfg.ratio) {
        let fit = lasso.solve(lam, Some(&warm))?;
        warm.clone_from(&fit.std_coef);
        fits.push(fit);
    }
    if cfg.include_zero {
        fits.push(lasso.solve(0.0, None)?);
    }
    Ok(fits)
}

/// Initial state `(X, DX)` at `start` implied by a fit: the kernel-space
/// coefficients for Green's matching (the basis of `D^2` is `(1, t)`), the
/// smoothed level and slope for gradient matching.
fn fitted_start(
    problem: &DiscoveryProblem,
    smoothed: &SmoothedCurves,
    method: Method,
    beta: &[f64],
) -> Result<(f64, [f64; 2])> {
    match method {
        Method::Greens => {
            let a = problem.nuisance(beta)?;
            Ok((0.0, [a[0], a[1]]))
        }
        _ => {
            let h = problem.rows[0];
            Ok((
                smoothed.grid[h],
                [smoothed.est[0][0][h], smoothed.est[0][1][h]],
            ))
        }
    }
}

/// Observation residuals `y_j - X(t_j)` of the solution of the fitted
/// equation started at `(start, state)`; `None` when the solve diverges.
fn trajectory_residuals(
    library: &CandidateLibrary,
    beta: &[f64],
    start: f64,
    state: [f64; 2],
    data: &SampledData,
    step: f64,
) -> Result<Option<DVector<f64>>> {
    let sys = library_system(library, beta, state, data.horizon);
    let traj = match solve_from(
        &sys,
        beta,
        &sys.operator.omega,
        start,
        &[state.to_vec()],
        step,
        &data.times,
    ) {
        Ok(t) => t,
        Err(Error::Divergence { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let r = DVector::from_iterator(
        data.len(),
        traj.level(0).iter().zip(&data.obs[0]).map(|(x, y)| y - x),
    );
    Ok(r.iter().all(|v| v.is_finite()).then_some(r))
}

/// Least-squares fit of the support coefficients and the initial state to
/// the observations by damped Gauss-Newton, returning the residual sum of
/// squares.
fn fit_trajectory(
    library: &CandidateLibrary,
    beta: &[f64],
    start: f64,
    state: [f64; 2],
    data: &SampledData,
    step: f64,
) -> Result<f64> {
    let support: Vec<usize> = (0..beta.len()).filter(|j| beta[*j] != 0.0).collect();
    let unpack = |theta: &DVector<f64>| {
        let mut b = beta.to_vec();
        for (c, j) in support.iter().enumerate() {
            b[*j] = theta[c];
        }
        let k = support.len();
        (b, [theta[k], theta[k + 1]])
    };
    let eval = |theta: &DVector<f64>| {
        let (b, st) = unpack(theta);
        trajectory_residuals(library, &b, start, st, data, step)
    };
    let k = support.len();
    let mut theta = DVector::from_iterator(k + 2, support.iter().map(|j| beta[*j]).chain(state));
    let Some(mut r) = eval(&theta)? else {
        return Ok(f64::INFINITY);
    };
    let mut rss = r.norm_squared();
    let mut mu = 1e-3;
    for _ in 0..30 {
        let mut jac = DMatrix::zeros(r.len(), k + 2);
        for c in 0..k + 2 {
            let h = 1e-6 * theta[c].abs().max(1e-2);
            let mut tp = theta.clone();
            tp[c] += h;
            let Some(rp) = eval(&tp)? else { return Ok(rss) };
            jac.set_column(c, &((&rp - &r) / h));
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        while mu < 1e12 {
            let mut a = jtj.clone();
            for d in 0..k + 2 {
                a[(d, d)] += mu * jtj[(d, d)].max(1e-12);
            }
            let Some(chol) = a.cholesky() else {
                mu *= 10.0;
                continue;
            };
            let trial = &theta - chol.solve(&jtr);
            if let Some(rt) = eval(&trial)? {
                let rt_ss = rt.norm_squared();
                if rt_ss < rss {
                    let gain = (rss - rt_ss) / rss;
                    theta = trial;
                    r = rt;
                    rss = rt_ss;
                    mu = (mu * 0.3).max(1e-12);
                    improved = gain > 1e-10;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok(rss)
}

/// `n log(RSS / n) + df log n` of the observations against the solution of
/// the fitted equation; infinite when the solve fails.
#[allow(clippy::too_many_arguments)]
fn trajectory_bic(
    problem: &DiscoveryProblem,
    smoothed: &SmoothedCurves,
    data: &SampledData,
    library: &CandidateLibrary,
    method: Method,
    beta: &[f64],
    df: usize,
    optimize: bool,
) -> Result<f64> {
    let (start, state) = fitted_start(problem, smoothed, method, beta)?;
    let rss = if optimize {
        fit_trajectory(library, beta, start, state, data, data.horizon / 4000.0)?
    } else {
        match trajectory_residuals(library, beta, start, state, data, data.horizon / 20000.0)? {
            Some(r) => r.norm_squared(),
            None => f64::INFINITY,
        }
    };
    if !rss.is_finite() {
        return Ok(f64::INFINITY);
    }
    Ok(bic(rss, df, data.len()))
}

/// L1-penalized matching over the library. `method` is Green's matching
/// (operator `D^2`) or order-`K` gradient matching; the kernel-space
/// coefficients are left unpenalized.
pub fn sparse_match(
    smoothed: &SmoothedCurves,
    data: &SampledData,
    library: &CandidateLibrary,
    method: Method,
    cfg: &MatchConfig,
    path: &PathConfig,
) -> Result<DiscoveryResult> {
    if method == Method::GradKm1 {
        return invalid("discovery supports Green's matching and order-K gradient matching");
    }
    let problem = discovery_problem(smoothed, library, method, cfg)?;
    let fits = run_path(&problem.x_proj, &problem.y_proj, path)?;
    let rows = problem.y.len();
    let scored: Vec<(Vec<f64>, f64)> = fits
        .iter()
        .map(|f| {
            let (beta, rss) = if path.refit {
                problem.refit(&f.coef)?
            } else {
                (f.coef.iter().copied().collect(), f.rss)
            };
            Ok((beta, rss))
        })
        .collect::<Result<_>>()?;
    let bics: Vec<f64> = fits
        .iter()
        .zip(&scored)
        .map(|(f, (beta, rss))| match path.selection {
            Selection::Matching => Ok(bic(*rss, f.df, rows)),
            Selection::Trajectory => trajectory_bic(
                &problem,
                smoothed,
                data,
                library,
                method,
                beta,
                f.df,
                path.optimize_trajectory,
            ),
        })
        .collect::<Result<_>>()?;
    let selectable = fits.iter().filter(|f| f.lambda > 0.0).count().max(1);
    let best = (0..selectable).fold(0, |best, i| if bics[i] <= bics[best] { i } else { best });
    let first = (0..selectable)
        .find(|i| bics[*i] <= bics[best] + path.bic_margin)
        .unwrap_or(best);
    // Among path points sharing that support, the least shrunken one.
    let selected = (first..selectable)
        .take_while(|i| fits[*i].df == fits[first].df && bics[*i] == bics[first])
        .last()
        .unwrap_or(first);
    let chosen = &fits[selected];
    let selected_beta: Vec<f64> = if path.report_refit {
        scored[selected].0.clone()
    } else {
        chosen.coef.iter().copied().collect()
    };
    let support = library
        .names()
        .iter()
        .zip(&selected_beta)
        .filter(|(_, b)| **b != 0.0)
        .map(|(n, _)| n.clone())
        .collect();
    Ok(DiscoveryResult {
        method,
        names: library.names().to_vec(),
        lambdas: fits.iter().map(|f| f.lambda).collect(),
        beta_path: fits
            .iter()
            .map(|f| f.coef.iter().copied().collect())
            .collect(),
        bic: bics,
        selected,
        selected_lambda: chosen.lambda,
        selected_beta,
        support,
    })
}

pub fn sparse_greens_match(
    smoothed: &SmoothedCurves,
    data: &SampledData,
    library: &CandidateLibrary,
    cfg: &MatchConfig,
    path: &PathConfig,
) -> Result<DiscoveryResult> {
    sparse_match(smoothed, data, library, Method::Greens, cfg, path)
}

pub fn sparse_gradient_match(
    smoothed: &SmoothedCurves,
    data: &SampledData,
    library: &CandidateLibrary,
    cfg: &MatchConfig,
    path: &PathConfig,
) -> Result<DiscoveryResult> {
    sparse_match(smoothed, data, library, Method::GradK, cfg, path)
}

/// Arrows `(DX, g(X)^T beta)` on a grid of `(X, DX)` states.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    /// States `(X, DX)`, `X` varying slowest.
    pub states: Vec<[f64; 2]>,
    pub arrows: Vec<[f64; 2]>,
    pub magnitude: Vec<f64>,
}

/// `points x points` states over `[lo, hi]^2`.
pub fn state_grid(lo: f64, hi: f64, points: usize) -> Vec<[f64; 2]> {
    let axis = crate::quadrature::linspace(lo, hi, points);
    axis.iter()
        .flat_map(|x| axis.iter().map(move |v| [*x, *v]))
        .collect()
}

pub fn evaluate_vector_field(
    beta: &[f64],
    library: &CandidateLibrary,
    states: &[[f64; 2]],
) -> VectorField {
    let arrows: Vec<[f64; 2]> = states
        .iter()
        .map(|s| [s[1], library.combine(s[0], beta)])
        .collect();
    let magnitude = arrows.iter().map(|a| a[0].hypot(a[1])).collect();
    VectorField {
        states: states.to_vec(),
        arrows,
        magnitude,
    }
}

/// Mean Euclidean distance between corresponding arrows.
pub fn mean_arrow_error(a: &VectorField, b: &VectorField) -> f64 {
    let n = a.arrows.len().max(1) as f64;
    a.arrows
        .iter()
        .zip(&b.arrows)
        .map(|(u, v)| (u[0] - v[0]).hypot(u[1] - v[1]))
        .sum::<f64>()
        / n
}

/// Settings of the simulated discovery study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    pub reps: usize,
    pub n: usize,
    pub gamma: f64,
    pub seed0: u64,
    pub horizon: f64,
    /// Initial `X(0)` and `DX(0)` are drawn uniformly from `[-r, r]`.
    pub initial_range: f64,
    pub sampling: Sampling,
    pub smoothing: SmoothingOptions,
    pub matching: MatchConfig,
    pub path: PathConfig,
    pub field_extent: f64,
    pub field_points: usize,
    /// Tolerance band on the true coefficient and bound on the others for a
    /// replication to count as recovered.
    pub coef_tolerance: f64,
    pub other_bound: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            reps: 20,
            n: 50,
            gamma: 0.05,
            seed0: 1,
            horizon: 20.0,
            initial_range: 0.5,
            sampling: Sampling::Equispaced,
            smoothing: SmoothingOptions::default(),
            matching: MatchConfig::default(),
            path: PathConfig::default(),
            field_extent: 2.0,
            field_points: 21,
            coef_tolerance: 0.15,
            other_bound: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryRep {
    pub rep: usize,
    pub seed: u64,
    pub initial: [f64; 2],
    pub results: Vec<DiscoveryResult>,
    /// Mean arrow error against the true field, per method.
    pub field_error: Vec<f64>,
    pub recovered: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub recovery_rate: f64,
    /// Per-replication mean arrow error, averaged over replications.
    pub mean_field_error: f64,
    /// Field of the coefficients averaged over replications.
    pub average_field: VectorField,
    /// Mean arrow error of the averaged field.
    pub average_field_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryBenchmark {
    pub library: Vec<String>,
    pub true_beta: Vec<f64>,
    pub reps: Vec<DiscoveryRep>,
    pub true_field: VectorField,
    pub summaries: Vec<MethodSummary>,
}

pub const DISCOVERY_METHODS: [Method; 2] = [Method::Greens, Method::GradK];

/// Recovery rule: the `target` coefficient within `tol` of `truth`, every other
/// coefficient below `bound` in absolute value.
pub fn recovered(beta: &[f64], target: usize, truth: f64, tol: f64, bound: f64) -> bool {
    beta.iter().enumerate().all(|(j, b)| {
        if j == target {
            (b - truth).abs() <= tol
        } else {
            b.abs() < bound
        }
    })
}

/// Pendulum `D^2 X = -sin X` discovery over the default library, Green's
/// matching against order-2 gradient matching.
pub fn discovery_benchmark(cfg: &DiscoveryConfig) -> Result<DiscoveryBenchmark> {
    if cfg.reps == 0 {
        return invalid("discovery needs at least one replication");
    }
    let library = CandidateLibrary::pendulum();
    let target = library
        .index_of("sin X")
        .expect("default library has sin X");
    let mut truth = vec![0.0; library.len()];
    truth[target] = -1.0;
    let states = state_grid(-cfg.field_extent, cfg.field_extent, cfg.field_points);
    let true_field = evaluate_vector_field(&truth, &library, &states);

    let reps: Vec<DiscoveryRep> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| -> Result<DiscoveryRep> {
            let seed = cfg.seed0.wrapping_add(rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let r = cfg.initial_range;
            let initial = [rng.random_range(-r..=r), rng.random_range(-r..=r)];
            let sys = library_system(&library, &truth, initial, cfg.horizon);
            let traj = reference_trajectory(&sys)?;
            let data = simulate_observations(&traj, &sys, cfg.n, cfg.gamma, cfg.sampling, seed)?;
            let smoothed = presmooth(&data, &sys, &DISCOVERY_METHODS, &cfg.smoothing)?;
            let mut results = Vec::new();
            let mut field_error = Vec::new();
            let mut rec = Vec::new();
            for m in DISCOVERY_METHODS {
                let res = sparse_match(
                    smoothed.for_method(m),
                    &data,
                    &library,
                    m,
                    &cfg.matching,
                    &cfg.path,
                )?;
                let field = evaluate_vector_field(&res.selected_beta, &library, &states);
                field_error.push(mean_arrow_error(&field, &true_field));
                rec.push(recovered(
                    &res.selected_beta,
                    target,
                    -1.0,
                    cfg.coef_tolerance,
                    cfg.other_bound,
                ));
                results.push(res);
            }
            Ok(DiscoveryRep {
                rep,
                seed,
                initial,
                results,
                field_error,
                recovered: rec,
            })
        })
        .collect::<Result<_>>()?;

    let g = reps.len() as f64;
    let summaries = DISCOVERY_METHODS
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let mut mean_beta = vec![0.0; library.len()];
            for r in &reps {
                for (a, b) in mean_beta.iter_mut().zip(&r.results[m].selected_beta) {
                    *a += b / g;
                }
            }
            let average_field = evaluate_vector_field(&mean_beta, &library, &states);
            MethodSummary {
                method: *method,
                recovery_rate: reps.iter().filter(|r| r.recovered[m]).count() as f64 / g,
                mean_field_error: reps.iter().map(|r| r.field_error[m]).sum::<f64>() / g,
                average_field_error: mean_arrow_error(&average_field, &true_field),
                average_field,
            }
        })
        .collect();
    Ok(DiscoveryBenchmark {
        library: library.names().to_vec(),
        true_beta: truth,
        reps,
        true_field,
        summaries,
    })
}
