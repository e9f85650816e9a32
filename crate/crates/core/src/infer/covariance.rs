use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::spd_inverse;
use crate::matching::{
    build_design, DesignBlocks, EstimateReport, Integrator, MatchConfig, Method,
};
use crate::quadrature::trapezoid_weights;
use crate::smooth::{local_poly_weights, residual_variance, SmoothSpec, SmoothedCurves};
use crate::systems::{DynamicSystem, SampledData, Sampling};

/// How the smoothing error is propagated into the parameter covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// Large-sample sandwich with the smoother replaced by its limit: integrals
    /// of the influence function against `sigma^2 / f_T`. Level-only methods.
    #[default]
    Asymptotic,
    /// Delta method through the exact local-polynomial weights, for every
    /// derivative order the method uses.
    SmootherWeights,
}

#[derive(Debug, Clone)]
pub struct CovarianceReport {
    pub mode: CovarianceMode,
    /// Hessian-like matrix over `theta = (beta, nuisance)`.
    pub sigma1: DMatrix<f64>,
    /// Middle matrix of the sandwich.
    pub sigma2: DMatrix<f64>,
    /// `n` times the covariance of the estimands (`beta`, then `omega` when
    /// estimated).
    pub sigma: DMatrix<f64>,
    pub se: Vec<f64>,
    pub noise_variance: Vec<f64>,
    /// Design density of the observation times on the grid.
    pub density: Vec<f64>,
    pub n: usize,
}

struct BlockDerivs {
    /// Global `theta` index of each local column.
    index: Vec<usize>,
    /// Unweighted `d r_i / d theta` restricted to `index` (rows = grid).
    d: DMatrix<f64>,
}

/// Operators `L` such that the residual of equation `i` depends on
/// `D^k xhat_i` through `L * D^k xhat_i` (besides the drive).
fn level_operators(
    design: &DesignBlocks,
    report: &EstimateReport,
    i: usize,
) -> Vec<(usize, DMatrix<f64>)> {
    let hh = design.grid.len();
    let kk = design.system.order;
    let omega = &report.omega[i];
    let eye = DMatrix::<f64>::identity(hh, hh);
    match design.method {
        Method::Greens if !design.omega_unknown => vec![(0, eye)],
        Method::Greens => {
            let ints = crate::matching::pure_integrators_for(kk, &design.grid);
            let mut l = eye;
            for k in 0..kk {
                l += ints[kk - k - 1].as_ref() * omega[k];
            }
            vec![(0, l)]
        }
        Method::GradK => {
            let mut ops = vec![(kk, eye.clone())];
            for k in 0..kk {
                if omega[k] != 0.0 {
                    ops.push((k, &eye * omega[k]));
                }
            }
            ops
        }
        Method::GradKm1 => {
            let c = design.blocks[i].integrator.to_dense(hh);
            let mut ops = vec![(kk - 1, eye)];
            for k in 0..kk {
                if omega[k] != 0.0 {
                    if k == kk - 1 {
                        ops[0].1 += &c * omega[k];
                    } else {
                        ops.push((k, &c * omega[k]));
                    }
                }
            }
            ops
        }
    }
}

fn theta_layout(design: &DesignBlocks) -> (usize, Vec<usize>) {
    let mut offsets = Vec::with_capacity(design.blocks.len());
    let mut next = design.num_beta();
    for b in &design.blocks {
        offsets.push(next);
        next += b.nuisance.len();
    }
    (next, offsets)
}

fn block_derivatives(
    design: &DesignBlocks,
    report: &EstimateReport,
    offsets: &[usize],
) -> Vec<BlockDerivs> {
    let hh = design.grid.len();
    let m = design.num_beta();
    let mut beta_cols: Vec<Vec<(usize, DVector<f64>)>> = vec![vec![]; design.blocks.len()];
    if design.is_separable() {
        for (i, b) in design.blocks.iter().enumerate() {
            let phi = b.phi.as_ref().unwrap();
            for (c, j) in b.terms.iter().enumerate() {
                beta_cols[i].push((*j, -phi.column(c).into_owned()));
            }
        }
    } else {
        let mut bp = report.beta.clone();
        for l in 0..m {
            let step = 1e-6 * report.beta[l].abs().max(1.0);
            bp[l] = report.beta[l] + step;
            let up = design.drive_on_grid(&bp);
            bp[l] = report.beta[l] - step;
            let down = design.drive_on_grid(&bp);
            bp[l] = report.beta[l];
            for (i, b) in design.blocks.iter().enumerate() {
                let df = (&up[i] - &down[i]) / (2.0 * step);
                if df.iter().any(|v| *v != 0.0) {
                    beta_cols[i].push((l, -b.integrator.apply(&df)));
                }
            }
        }
    }
    design
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let nb = beta_cols[i].len();
            let r = b.nuisance.len();
            let mut d = DMatrix::zeros(hh, nb + r);
            let mut index = Vec::with_capacity(nb + r);
            for (c, (j, col)) in beta_cols[i].iter().enumerate() {
                d.set_column(c, col);
                index.push(*j);
            }
            for c in 0..r {
                d.set_column(nb + c, &(-b.psi.column(c)));
                index.push(offsets[i] + c);
            }
            BlockDerivs { index, d }
        })
        .collect()
}

/// `df_i / dX_l` at every grid node, by central differences of the drive.
fn drive_state_jacobian(design: &DesignBlocks, beta: &[f64]) -> Vec<Vec<DVector<f64>>> {
    let p = design.system.dim;
    let hh = design.grid.len();
    let mut out = vec![vec![DVector::zeros(hh); p]; p];
    let mut x = design.xhat.clone();
    for l in 0..p {
        let step: Vec<f64> = (0..hh)
            .map(|h| 1e-6 * design.xhat[l][h].abs().max(1.0))
            .collect();
        for h in 0..hh {
            x[l][h] = design.xhat[l][h] + step[h];
        }
        let up = crate::matching::drive_on_grid(&design.system, &x, &design.grid, beta);
        for h in 0..hh {
            x[l][h] = design.xhat[l][h] - step[h];
        }
        let down = crate::matching::drive_on_grid(&design.system, &x, &design.grid, beta);
        x[l].clone_from(&design.xhat[l]);
        for i in 0..p {
            for h in 0..hh {
                out[i][l][h] = (up[i][h] - down[i][h]) / (2.0 * step[h]);
            }
        }
    }
    out
}

/// Density of the observation design on `grid`: `1 / C` for equispaced
/// sampling, otherwise a Gaussian kernel estimate reflected at both ends.
pub fn design_density(data: &SampledData, grid: &[f64]) -> Vec<f64> {
    let c = data.horizon;
    if data.sampling == Sampling::Equispaced {
        return vec![1.0 / c; grid.len()];
    }
    let n = data.len() as f64;
    let mean = data.times.iter().sum::<f64>() / n;
    let sd = (data.times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    let bw = 1.06 * sd.max(1e-12) * n.powf(-0.2);
    let kern = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    grid.iter()
        .map(|t| {
            data.times
                .iter()
                .map(|tj| kern((t - tj) / bw) + kern((t + tj) / bw) + kern((2.0 * c - t - tj) / bw))
                .sum::<f64>()
                / (n * bw)
        })
        .collect()
}

/// Sandwich covariance `Sigma_1^{-1} Sigma_2 Sigma_1^{-1}` of a matching
/// estimate, linearized in the smoothing error at the estimate.
pub fn asymptotic_covariance(
    report: &EstimateReport,
    smoothed: &SmoothedCurves,
    data: &SampledData,
    system: &DynamicSystem,
    cfg: &MatchConfig,
    mode: CovarianceMode,
) -> Result<CovarianceReport> {
    let sys = if report.omega_estimated {
        system.with_operator_known(false)
    } else {
        system.clone()
    };
    let design = build_design(smoothed, &sys, report.method, cfg)?;
    let hh = design.grid.len();
    let p = sys.dim;
    let (dim, offsets) = theta_layout(&design);
    let quad = trapezoid_weights(&design.grid);
    let dw: Vec<f64> = quad
        .iter()
        .zip(&design.weights)
        .map(|(q, w)| q * w)
        .collect();

    let derivs = block_derivatives(&design, report, &offsets);
    let mut sigma1 = DMatrix::zeros(dim, dim);
    for bd in &derivs {
        let mut dwd = bd.d.clone();
        for (h, v) in dw.iter().enumerate() {
            dwd.row_mut(h).scale_mut(*v);
        }
        let local = bd.d.transpose() * &dwd * 2.0;
        for (a, ga) in bd.index.iter().enumerate() {
            for (b, gb) in bd.index.iter().enumerate() {
                sigma1[(*ga, *gb)] += local[(a, b)];
            }
        }
    }

    // influence[k][l] (dim x H): sum_ih Dw_h d_ih dr_ih / d(D^k xhat_l)(t_g).
    let max_k = sys.order;
    let mut influence = vec![vec![DMatrix::<f64>::zeros(dim, hh); p]; max_k + 1];
    let dfdx = drive_state_jacobian(&design, &report.beta);
    for (i, bd) in derivs.iter().enumerate() {
        let mut dtw = bd.d.transpose();
        for (h, v) in dw.iter().enumerate() {
            dtw.column_mut(h).scale_mut(*v);
        }
        for (k, op) in level_operators(&design, report, i) {
            let u = &dtw * op;
            scatter(&mut influence[k][i], &bd.index, &u, 1.0);
        }
        let u = match &design.blocks[i].integrator {
            Integrator::Identity => dtw.clone(),
            Integrator::Matrix(m) => &dtw * m.as_ref(),
        };
        for l in 0..p {
            let g = &dfdx[i][l];
            if g.iter().all(|v| *v == 0.0) {
                continue;
            }
            let mut ug = u.clone();
            for (c, v) in g.iter().enumerate() {
                ug.column_mut(c).scale_mut(*v);
            }
            scatter(&mut influence[0][l], &bd.index, &ug, -1.0);
        }
    }

    let noise_variance: Vec<f64> = (0..p)
        .map(|l| residual_variance(data, l, smoothed.bandwidths[l][0]).map(|v| v.0))
        .collect::<Result<_>>()?;
    let density = design_density(data, &design.grid);
    let n = data.len();
    let mut sigma2 = DMatrix::zeros(dim, dim);
    let scale_cov = match mode {
        CovarianceMode::Asymptotic => {
            if influence
                .iter()
                .skip(1)
                .any(|per| per.iter().any(|m| m.amax() > 0.0))
            {
                return invalid(
                    "asymptotic covariance covers level-only methods; use smoother weights",
                );
            }
            for l in 0..p {
                // Column g scaled so that M M^T = sum_g 4 q_g sigma^2 / f_T (h_g / q_g)(h_g / q_g)^T.
                let mut m = influence[0][l].clone();
                for g in 0..hh {
                    let s = if quad[g] > 0.0 {
                        2.0 * (noise_variance[l] / (quad[g] * density[g])).sqrt()
                    } else {
                        0.0
                    };
                    m.column_mut(g).scale_mut(s);
                }
                sigma2 += &m * m.transpose();
            }
            1.0 / n as f64
        }
        CovarianceMode::SmootherWeights => {
            for l in 0..p {
                let mut c = DMatrix::<f64>::zeros(dim, n);
                for (k, per) in influence.iter().enumerate() {
                    let b = &per[l];
                    if b.amax() == 0.0 {
                        continue;
                    }
                    let spec =
                        SmoothSpec::new(k, smoothed.bandwidths[l].get(k).copied().unwrap_or(0.0));
                    for (g, t) in design.grid.iter().enumerate() {
                        let col = b.column(g);
                        if col.amax() == 0.0 {
                            continue;
                        }
                        let w = local_poly_weights(&data.times, *t, &spec)?;
                        for (r, wj) in w.weights.iter().enumerate() {
                            if *wj != 0.0 {
                                let mut target = c.column_mut(w.start + r);
                                target.axpy(*wj, &col, 1.0);
                            }
                        }
                    }
                }
                sigma2 += &c * c.transpose() * (4.0 * noise_variance[l]);
            }
            1.0
        }
    };
    sigma2 = (&sigma2 + sigma2.transpose()) * 0.5;
    let inv = spd_inverse(&sigma1, "matching Hessian")?;
    let full = &inv * &sigma2 * &inv * scale_cov;
    let full = (&full + full.transpose()) * 0.5;

    let est_index = estimand_indices(&design, &offsets);
    let e = est_index.len();
    let mut sigma = DMatrix::zeros(e, e);
    for (a, ga) in est_index.iter().enumerate() {
        for (b, gb) in est_index.iter().enumerate() {
            sigma[(a, b)] = full[(*ga, *gb)] * n as f64;
        }
    }
    let se = est_index
        .iter()
        .map(|g| full[(*g, *g)].max(0.0).sqrt())
        .collect();
    Ok(CovarianceReport {
        mode,
        sigma1,
        sigma2,
        sigma,
        se,
        noise_variance,
        density,
        n,
    })
}

fn scatter(target: &mut DMatrix<f64>, index: &[usize], local: &DMatrix<f64>, sign: f64) {
    for (a, ga) in index.iter().enumerate() {
        for c in 0..local.ncols() {
            target[(*ga, c)] += sign * local[(a, c)];
        }
    }
}

fn estimand_indices(design: &DesignBlocks, offsets: &[usize]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..design.num_beta()).collect();
    if design.omega_unknown {
        for (b, off) in design.blocks.iter().zip(offsets) {
            idx.extend((0..b.nuisance.omega).map(|k| off + b.nuisance.alpha + k));
        }
    }
    idx
}
