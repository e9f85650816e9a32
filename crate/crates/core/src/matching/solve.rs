use nalgebra::{DMatrix, DVector};

use super::design::DesignBlocks;
use super::{EstimateReport, MatchConfig, SolverChoice, SolverPath};
use crate::error::{invalid, Error, Result};
use crate::linalg::least_squares;

fn scale_rows(m: &DMatrix<f64>, s: &[f64]) -> DMatrix<f64> {
    let mut out = m.clone();
    for (r, v) in s.iter().enumerate() {
        out.row_mut(r).scale_mut(*v);
    }
    out
}

fn scale_vec(v: &DVector<f64>, s: &[f64]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().zip(s).map(|(a, b)| a * b))
}

/// Orthonormal basis of the (weighted) nuisance column space.
#[derive(Debug, Clone)]
pub(crate) struct Projector {
    q: DMatrix<f64>,
}

impl Projector {
    pub(crate) fn new(psi_w: &DMatrix<f64>) -> Self {
        let (rows, cols) = psi_w.shape();
        if cols == 0 {
            return Projector {
                q: DMatrix::zeros(rows, 0),
            };
        }
        let mut eq = psi_w.clone();
        for mut c in eq.column_iter_mut() {
            let n = c.norm();
            if n > 0.0 {
                c /= n;
            }
        }
        let svd = eq.svd(true, false);
        let u = svd.u.expect("requested U");
        let smax = svd.singular_values.max();
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|j| svd.singular_values[*j] > smax * 1e-12 && smax > 0.0)
            .collect();
        let mut q = DMatrix::zeros(rows, keep.len());
        for (c, j) in keep.iter().enumerate() {
            q.set_column(c, &u.column(*j));
        }
        Projector { q }
    }

    /// `(I - Q Q^T) v`.
    pub(crate) fn residual(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.q.ncols() == 0 {
            return v.clone();
        }
        v - &self.q * (self.q.transpose() * v)
    }

    pub(crate) fn residual_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.q.ncols() == 0 {
            return m.clone();
        }
        m - &self.q * (self.q.transpose() * m)
    }
}

struct Prepared<'a> {
    design: &'a DesignBlocks,
    sw: Vec<f64>,
    zw: Vec<DVector<f64>>,
    psiw: Vec<DMatrix<f64>>,
    proj: Vec<Projector>,
}

impl<'a> Prepared<'a> {
    fn new(design: &'a DesignBlocks) -> Self {
        let sw = design.sqrt_weights();
        let zw = design.blocks.iter().map(|b| scale_vec(&b.z, &sw)).collect();
        let psiw: Vec<DMatrix<f64>> = design
            .blocks
            .iter()
            .map(|b| scale_rows(&b.psi, &sw))
            .collect();
        let proj = psiw.iter().map(Projector::new).collect();
        Prepared {
            design,
            sw,
            zw,
            psiw,
            proj,
        }
    }

    /// Stacked profiled residual `P_i (Z_i - zeta_i(beta))`.
    fn residual(&self, beta: &[f64]) -> DVector<f64> {
        let zeta = self.design.zeta(beta);
        let parts: Vec<DVector<f64>> = (0..zeta.len())
            .map(|i| self.proj[i].residual(&(&self.zw[i] - scale_vec(&zeta[i], &self.sw))))
            .collect();
        stack(&parts)
    }

    fn objective(&self, beta: &[f64]) -> f64 {
        self.residual(beta).norm_squared()
    }

    /// Jacobian of the weighted `zeta` blocks with respect to `beta`,
    /// projected, stacked and negated (the Jacobian of `residual`).
    fn jacobian(&self, beta: &[f64]) -> DMatrix<f64> {
        let d = self.design;
        let m = d.num_beta();
        let hh = d.grid.len();
        let p = d.blocks.len();
        let mut jac = DMatrix::zeros(hh * p, m);
        if d.is_separable() {
            for (i, b) in d.blocks.iter().enumerate() {
                let phi =
                    self.proj[i].residual_matrix(&scale_rows(b.phi.as_ref().unwrap(), &self.sw));
                for (c, j) in b.terms.iter().enumerate() {
                    let mut col = jac.view_mut((i * hh, *j), (hh, 1));
                    col -= phi.column(c);
                }
            }
            return jac;
        }
        let mut bp = beta.to_vec();
        for l in 0..m {
            let step = 1e-6 * beta[l].abs().max(1.0);
            bp[l] = beta[l] + step;
            let up = d.drive_on_grid(&bp);
            bp[l] = beta[l] - step;
            let down = d.drive_on_grid(&bp);
            bp[l] = beta[l];
            for i in 0..p {
                let df = (&up[i] - &down[i]) / (2.0 * step);
                if df.iter().all(|v| *v == 0.0) {
                    continue;
                }
                let dz =
                    self.proj[i].residual(&scale_vec(&d.blocks[i].integrator.apply(&df), &self.sw));
                let mut col = jac.view_mut((i * hh, l), (hh, 1));
                col -= &dz;
            }
        }
        jac
    }

    fn nuisance(&self, beta: &[f64]) -> Result<(Vec<DVector<f64>>, f64, f64)> {
        let zeta = self.design.zeta(beta);
        let mut nus = Vec::with_capacity(zeta.len());
        let mut obj = 0.0;
        let mut cond: f64 = 1.0;
        for i in 0..zeta.len() {
            let target = &self.zw[i] - scale_vec(&zeta[i], &self.sw);
            let sol = least_squares(&self.psiw[i], &target)?;
            cond = cond.max(sol.condition);
            obj += (&target - &self.psiw[i] * &sol.x).norm_squared();
            nus.push(sol.x);
        }
        Ok((nus, obj, cond))
    }
}

fn stack(parts: &[DVector<f64>]) -> DVector<f64> {
    let n: usize = parts.iter().map(|p| p.len()).sum();
    DVector::from_iterator(n, parts.iter().flat_map(|p| p.iter().copied()))
}

/// Minimizes the matching objective for the design with the selected
/// solver and assembles the report.
pub fn solve_design(design: &DesignBlocks, cfg: &MatchConfig) -> Result<EstimateReport> {
    let path = match cfg.solver {
        SolverChoice::Auto if design.is_separable() => SolverPath::LeastSquares,
        SolverChoice::Auto => SolverPath::GaussNewton,
        SolverChoice::LeastSquares => {
            if !design.is_separable() {
                return invalid("least-squares path needs a separable system");
            }
            SolverPath::LeastSquares
        }
        SolverChoice::GaussNewton => SolverPath::GaussNewton,
    };
    let prep = Prepared::new(design);
    let (beta, iterations, converged, cond_ls, trace) = match path {
        SolverPath::LeastSquares => {
            let (b, c) = separable_least_squares(&prep)?;
            (b, 1, true, c, None)
        }
        SolverPath::GaussNewton => {
            let init = cfg
                .initial_beta
                .clone()
                .unwrap_or_else(|| vec![0.0; design.num_beta()]);
            if init.len() != design.num_beta() {
                return invalid("initial beta has the wrong length");
            }
            let (b, it, conv, trace) = gauss_newton(&prep, init, cfg)?;
            (b, it, conv, 1.0, Some(trace))
        }
    };
    let (nus, objective, cond_nu) = prep.nuisance(&beta)?;
    let mut report = EstimateReport::assemble(
        design,
        beta,
        &nus,
        objective,
        iterations,
        converged,
        cond_ls.max(cond_nu),
        path,
    );
    if let Some(trace) = trace {
        report.objective_trace = trace;
    }
    Ok(report)
}

fn separable_least_squares(prep: &Prepared<'_>) -> Result<(Vec<f64>, f64)> {
    let d = prep.design;
    let m = d.num_beta();
    let sep_disjoint = d
        .system
        .separable
        .as_ref()
        .map(|s| s.is_block_disjoint())
        .unwrap_or(false);
    let mut beta = vec![0.0; m];
    let mut cond: f64 = 1.0;
    if sep_disjoint {
        for (i, b) in d.blocks.iter().enumerate() {
            let phi_w = scale_rows(b.phi.as_ref().unwrap(), &prep.sw);
            let r = prep.psiw[i].ncols();
            let mut a = DMatrix::zeros(phi_w.nrows(), r + phi_w.ncols());
            a.columns_mut(0, r).copy_from(&prep.psiw[i]);
            a.columns_mut(r, phi_w.ncols()).copy_from(&phi_w);
            let target = &prep.zw[i] - scale_vec(b.phi_offset.as_ref().unwrap(), &prep.sw);
            let sol = least_squares(&a, &target)?;
            cond = cond.max(sol.condition);
            for (c, j) in b.terms.iter().enumerate() {
                beta[*j] = sol.x[r + c];
            }
        }
        return Ok((beta, cond));
    }
    // Shared parameters: project out each nuisance block and solve jointly.
    let hh = d.grid.len();
    let p = d.blocks.len();
    let mut a = DMatrix::zeros(hh * p, m);
    let mut y = DVector::zeros(hh * p);
    for (i, b) in d.blocks.iter().enumerate() {
        let phi = prep.proj[i].residual_matrix(&scale_rows(b.phi.as_ref().unwrap(), &prep.sw));
        for (c, j) in b.terms.iter().enumerate() {
            let mut col = a.view_mut((i * hh, *j), (hh, 1));
            col += phi.column(c);
        }
        let target = prep.proj[i]
            .residual(&(&prep.zw[i] - scale_vec(b.phi_offset.as_ref().unwrap(), &prep.sw)));
        y.rows_mut(i * hh, hh).copy_from(&target);
    }
    let sol = least_squares(&a, &y)?;
    Ok((sol.x.iter().copied().collect(), sol.condition))
}

/// Levenberg-damped Gauss-Newton on the profiled objective with a halving
/// line search. Returns `(beta, iterations, converged, objective trace)`.
fn gauss_newton(
    prep: &Prepared<'_>,
    mut beta: Vec<f64>,
    cfg: &MatchConfig,
) -> Result<(Vec<f64>, usize, bool, Vec<f64>)> {
    let m = beta.len();
    let mut obj = prep.objective(&beta);
    if !obj.is_finite() {
        return Err(Error::Divergence { t: f64::NAN });
    }
    let mut trace = vec![obj];
    let mut mu = 1e-3;
    for iter in 1..=cfg.gn_max_iter {
        let r = prep.residual(&beta);
        let jac = prep.jacobian(&beta);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() <= 1e-14 * (1.0 + obj) {
            return Ok((beta, iter, true, trace));
        }
        let mut accepted = None;
        while mu <= 1e12 && accepted.is_none() {
            let mut damped = jtj.clone();
            for j in 0..m {
                damped[(j, j)] += mu * jtj[(j, j)].max(1e-12);
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    mu *= 10.0;
                    continue;
                }
            };
            let mut s = 1.0;
            for _ in 0..30 {
                let trial: Vec<f64> = beta
                    .iter()
                    .zip(step.iter())
                    .map(|(b, d)| b + s * d)
                    .collect();
                let t_obj = prep.objective(&trial);
                if t_obj.is_finite() && t_obj <= obj {
                    accepted = Some((trial, t_obj));
                    break;
                }
                s *= 0.5;
            }
            if accepted.is_none() {
                mu *= 10.0;
            }
        }
        let Some((trial, t_obj)) = accepted else {
            return Ok((beta, iter, false, trace));
        };
        let decrease = obj - t_obj;
        beta = trial;
        let old = obj;
        obj = t_obj;
        trace.push(obj);
        mu = (mu * 0.3).max(1e-12);
        if decrease <= cfg.gn_tol * old.max(f64::MIN_POSITIVE) {
            return Ok((beta, iter, true, trace));
        }
    }
    Ok((beta, cfg.gn_max_iter, false, trace))
}
