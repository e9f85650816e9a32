use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{MatchConfig, Method};
use crate::error::{invalid, Error, Result};
use crate::greens::{poly_basis, poly_green_matrix, OperatorKernel};
use crate::quadrature::cumulative_matrix;
use crate::smooth::SmoothedCurves;
use crate::systems::DynamicSystem;

/// Linear map applied to the drive before matching.
#[derive(Debug, Clone)]
pub enum Integrator {
    Identity,
    Matrix(Arc<DMatrix<f64>>),
}

impl Integrator {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match self {
            Integrator::Identity => v.clone(),
            Integrator::Matrix(m) => m.as_ref() * v,
        }
    }

    pub fn apply_matrix(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            Integrator::Identity => v.clone(),
            Integrator::Matrix(m) => m.as_ref() * v,
        }
    }

    pub fn to_dense(&self, n: usize) -> DMatrix<f64> {
        match self {
            Integrator::Identity => DMatrix::identity(n, n),
            Integrator::Matrix(m) => m.as_ref().clone(),
        }
    }
}

/// Column layout of the nuisance block: `alpha` kernel-space coefficients
/// followed, when estimated, by the `K` operator coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NuisanceLayout {
    pub alpha: usize,
    pub omega: usize,
}

impl NuisanceLayout {
    pub fn len(&self) -> usize {
        self.alpha + self.omega
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One equation's matching problem. All quantities are unweighted; the
/// solvers multiply rows by `sqrt(w)`.
///
/// The residual is `z - psi * nu - integrator * F_i(beta)`.
#[derive(Debug, Clone)]
pub struct EquationBlock {
    pub z: DVector<f64>,
    pub psi: DMatrix<f64>,
    pub nuisance: NuisanceLayout,
    pub integrator: Integrator,
    /// Parameters entering this equation's separable form.
    pub terms: Vec<usize>,
    /// `integrator * g_i`, present for separable systems.
    pub phi: Option<DMatrix<f64>>,
    /// `integrator * offset_i`, present for separable systems.
    pub phi_offset: Option<DVector<f64>>,
}

/// Matching design for all equations on a common grid.
#[derive(Debug, Clone)]
pub struct DesignBlocks {
    pub method: Method,
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub blocks: Vec<EquationBlock>,
    /// Level estimates `xhat[i][h]` at which the drive is evaluated.
    pub xhat: Vec<Vec<f64>>,
    pub system: DynamicSystem,
    /// Whether the operator coefficients are estimated.
    pub omega_unknown: bool,
}

impl DesignBlocks {
    pub fn sqrt_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.sqrt()).collect()
    }

    pub fn num_beta(&self) -> usize {
        self.system.num_params()
    }

    pub fn is_separable(&self) -> bool {
        self.blocks.iter().all(|b| b.phi.is_some())
    }

    /// Drive `F[i]` on the grid at `xhat`, averaging one-sided limits at
    /// drive breakpoints that fall on grid nodes.
    pub fn drive_on_grid(&self, beta: &[f64]) -> Vec<DVector<f64>> {
        drive_on_grid(&self.system, &self.xhat, &self.grid, beta)
    }

    /// `zeta_i(beta) = integrator_i * F_i(beta)` for every equation.
    pub fn zeta(&self, beta: &[f64]) -> Vec<DVector<f64>> {
        if self.is_separable() {
            return self
                .blocks
                .iter()
                .map(|b| {
                    let bt =
                        DVector::from_iterator(b.terms.len(), b.terms.iter().map(|j| beta[*j]));
                    b.phi_offset.as_ref().unwrap() + b.phi.as_ref().unwrap() * bt
                })
                .collect();
        }
        let f = self.drive_on_grid(beta);
        self.blocks
            .iter()
            .zip(&f)
            .map(|(b, fi)| b.integrator.apply(fi))
            .collect()
    }
}

fn breakpoint_nodes(system: &DynamicSystem, grid: &[f64]) -> Vec<bool> {
    let span = grid.last().copied().unwrap_or(1.0) - grid.first().copied().unwrap_or(0.0);
    grid.iter()
        .map(|t| {
            system
                .breakpoints
                .iter()
                .any(|b| (b - t).abs() <= 1e-9 * span.max(1.0))
        })
        .collect()
}

fn limits(t: f64, grid: &[f64]) -> [f64; 2] {
    let eps = 1e-9 * (grid.last().unwrap() - grid[0]).abs().max(1.0);
    [t - eps, t + eps]
}

pub(crate) fn drive_on_grid(
    system: &DynamicSystem,
    xhat: &[Vec<f64>],
    grid: &[f64],
    beta: &[f64],
) -> Vec<DVector<f64>> {
    let p = system.dim;
    let at_break = breakpoint_nodes(system, grid);
    let mut out = vec![DVector::zeros(grid.len()); p];
    let mut x = vec![0.0; p];
    let mut f = vec![0.0; p];
    for (h, t) in grid.iter().enumerate() {
        for i in 0..p {
            x[i] = xhat[i][h];
        }
        if at_break[h] {
            for s in limits(*t, grid) {
                (system.drive)(&x, s, beta, &mut f);
                for i in 0..p {
                    out[i][h] += 0.5 * f[i];
                }
            }
        } else {
            (system.drive)(&x, *t, beta, &mut f);
            for i in 0..p {
                out[i][h] = f[i];
            }
        }
    }
    out
}

/// Separable features `g_i` (rows = grid) and offsets on the grid.
pub(crate) fn features_on_grid(
    system: &DynamicSystem,
    xhat: &[Vec<f64>],
    grid: &[f64],
) -> Option<Vec<(DMatrix<f64>, DVector<f64>)>> {
    let sep = system.separable.as_ref()?;
    let p = system.dim;
    let at_break = breakpoint_nodes(system, grid);
    let mut out: Vec<(DMatrix<f64>, DVector<f64>)> = sep
        .terms
        .iter()
        .map(|t| {
            (
                DMatrix::zeros(grid.len(), t.len()),
                DVector::zeros(grid.len()),
            )
        })
        .collect();
    let mut x = vec![0.0; p];
    for (h, t) in grid.iter().enumerate() {
        for i in 0..p {
            x[i] = xhat[i][h];
        }
        let times: Vec<(f64, f64)> = if at_break[h] {
            limits(*t, grid).iter().map(|s| (*s, 0.5)).collect()
        } else {
            vec![(*t, 1.0)]
        };
        for (i, (g, off)) in out.iter_mut().enumerate() {
            let mut row = vec![0.0; sep.terms[i].len()];
            for (s, wgt) in &times {
                let o = (sep.eval)(i, &x, *s, &mut row);
                off[h] += wgt * o;
                for (c, v) in row.iter().enumerate() {
                    g[(h, c)] += wgt * v;
                }
            }
        }
    }
    Some(out)
}

/// Matching weights: user-supplied, or the indicator of
/// `[trim * C, (1 - trim) * C]`.
pub fn matching_weights(grid: &[f64], horizon: f64, cfg: &MatchConfig) -> Result<Vec<f64>> {
    if let Some(w) = &cfg.weights {
        if w.len() != grid.len() || w.iter().any(|v| !(*v >= 0.0)) {
            return invalid("weights must be non-negative, one per grid point");
        }
        return Ok(w.clone());
    }
    if !(0.0..0.5).contains(&cfg.trim) {
        return invalid("trim fraction must lie in [0, 0.5)");
    }
    let (lo, hi) = (cfg.trim * horizon, (1.0 - cfg.trim) * horizon);
    let tol = 1e-12 * horizon;
    Ok(grid
        .iter()
        .map(|t| {
            if *t >= lo - tol && *t <= hi + tol {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

const MIN_INTEGRAL_GRID: usize = 201;

fn check_inputs(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    needed_order: usize,
) -> Result<()> {
    if smoothed.dim() != system.dim {
        return invalid("smoothed curves do not match the system dimension");
    }
    if smoothed.max_order() < needed_order {
        return invalid(format!(
            "method needs smoothed derivatives up to order {needed_order}"
        ));
    }
    let g = &smoothed.grid;
    if g.windows(2).any(|w| w[1] <= w[0])
        || g[0] < -1e-12
        || *g.last().unwrap() > system.horizon * (1.0 + 1e-12)
    {
        return invalid("grid must be increasing and inside [0, C]");
    }
    Ok(())
}

fn attach_features(
    blocks: &mut [EquationBlock],
    system: &DynamicSystem,
    xhat: &[Vec<f64>],
    grid: &[f64],
) {
    if let Some(feats) = features_on_grid(system, xhat, grid) {
        let sep = system.separable.as_ref().unwrap();
        for (i, (b, (g, off))) in blocks.iter_mut().zip(feats).enumerate() {
            b.terms = sep.terms[i].clone();
            b.phi = Some(b.integrator.apply_matrix(&g));
            b.phi_offset = Some(b.integrator.apply(&off));
        }
    }
}

fn column(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

/// Builds the matching design for `method`. For Green's matching the
/// operator is treated as known or unknown according to the system.
pub fn build_design(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    method: Method,
    cfg: &MatchConfig,
) -> Result<DesignBlocks> {
    match method {
        Method::Greens if system.operator.known => build_green_known(smoothed, system, cfg),
        Method::Greens => {
            let integrators = pure_integrators(system.order, &smoothed.grid);
            build_green_unknown(smoothed, system, cfg, &integrators)
        }
        Method::GradK => build_gradient(smoothed, system, cfg, false),
        Method::GradKm1 => build_gradient(smoothed, system, cfg, true),
    }
}

/// Quadrature matrices of `G_k` for `k = 1..=K` (index `k - 1`).
pub(crate) fn pure_integrators(order: usize, grid: &[f64]) -> Vec<Arc<DMatrix<f64>>> {
    (1..=order)
        .map(|k| Arc::new(poly_green_matrix(k, grid)))
        .collect()
}

fn base_design(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    method: Method,
    cfg: &MatchConfig,
    blocks: Vec<EquationBlock>,
    omega_unknown: bool,
) -> Result<DesignBlocks> {
    let weights = matching_weights(&smoothed.grid, system.horizon, cfg)?;
    let xhat: Vec<Vec<f64>> = smoothed.est.iter().map(|v| v[0].clone()).collect();
    let mut d = DesignBlocks {
        method,
        grid: smoothed.grid.clone(),
        weights,
        blocks,
        xhat,
        system: system.clone(),
        omega_unknown,
    };
    attach_features(&mut d.blocks, system, &d.xhat, &d.grid);
    Ok(d)
}

fn build_green_known(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    cfg: &MatchConfig,
) -> Result<DesignBlocks> {
    check_inputs(smoothed, system, 0)?;
    let grid = &smoothed.grid;
    if grid.len() < MIN_INTEGRAL_GRID {
        return Err(Error::InvalidArgument(format!(
            "grid of {} points is too coarse for quadrature (need {MIN_INTEGRAL_GRID})",
            grid.len()
        )));
    }
    let kk = system.order;
    // (omega, basis matrix, Green's matrix) per distinct operator.
    type Cached = (Vec<f64>, DMatrix<f64>, Arc<DMatrix<f64>>);
    let mut cache: Vec<Cached> = Vec::new();
    let mut blocks = Vec::with_capacity(system.dim);
    for i in 0..system.dim {
        let omega = &system.operator.omega[i];
        if !cache.iter().any(|(w, _, _)| w == omega) {
            let op = OperatorKernel::new(omega)?;
            cache.push((
                omega.clone(),
                op.basis_matrix(grid),
                Arc::new(op.green_matrix(grid)),
            ));
        }
        let (_, basis, green) = cache.iter().find(|(w, _, _)| w == omega).unwrap();
        blocks.push(EquationBlock {
            z: column(&smoothed.est[i][0]),
            psi: basis.clone(),
            nuisance: NuisanceLayout {
                alpha: kk,
                omega: 0,
            },
            integrator: Integrator::Matrix(green.clone()),
            terms: vec![],
            phi: None,
            phi_offset: None,
        });
    }
    base_design(smoothed, system, Method::Greens, cfg, blocks, false)
}

/// Unknown-operator Green's design with caller-supplied quadrature matrices
/// of `G_1..G_K`.
pub(crate) fn build_green_unknown(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    cfg: &MatchConfig,
    integrators: &[Arc<DMatrix<f64>>],
) -> Result<DesignBlocks> {
    check_inputs(smoothed, system, 0)?;
    let grid = &smoothed.grid;
    if grid.len() < MIN_INTEGRAL_GRID {
        return Err(Error::InvalidArgument(format!(
            "grid of {} points is too coarse for quadrature (need {MIN_INTEGRAL_GRID})",
            grid.len()
        )));
    }
    let kk = system.order;
    let hh = grid.len();
    let mut basis = DMatrix::zeros(hh, kk);
    for (h, t) in grid.iter().enumerate() {
        for (c, v) in poly_basis::<f64>(kk, *t).into_iter().enumerate() {
            basis[(h, c)] = v;
        }
    }
    let blocks = (0..system.dim)
        .map(|i| {
            let x = column(&smoothed.est[i][0]);
            let mut psi = DMatrix::zeros(hh, 2 * kk);
            psi.columns_mut(0, kk).copy_from(&basis);
            for k in 0..kk {
                // omega_k multiplies int G_{K-k} X.
                let col = -(integrators[kk - k - 1].as_ref() * &x);
                psi.set_column(kk + k, &col);
            }
            EquationBlock {
                z: x,
                psi,
                nuisance: NuisanceLayout {
                    alpha: kk,
                    omega: kk,
                },
                integrator: Integrator::Matrix(integrators[kk - 1].clone()),
                terms: vec![],
                phi: None,
                phi_offset: None,
            }
        })
        .collect();
    base_design(smoothed, system, Method::Greens, cfg, blocks, true)
}

fn build_gradient(
    smoothed: &SmoothedCurves,
    system: &DynamicSystem,
    cfg: &MatchConfig,
    reduced: bool,
) -> Result<DesignBlocks> {
    let kk = system.order;
    let top = if reduced { kk - 1 } else { kk };
    check_inputs(smoothed, system, top)?;
    let grid = &smoothed.grid;
    let hh = grid.len();
    let unknown = !system.operator.known;
    let integrator = if reduced {
        if hh < MIN_INTEGRAL_GRID {
            return Err(Error::InvalidArgument(format!(
                "grid of {hh} points is too coarse for quadrature (need {MIN_INTEGRAL_GRID})"
            )));
        }
        Integrator::Matrix(Arc::new(cumulative_matrix(grid)))
    } else {
        Integrator::Identity
    };
    let blocks = (0..system.dim)
        .map(|i| {
            let mut z = column(&smoothed.est[i][top]);
            let alpha = usize::from(reduced);
            let mut psi = DMatrix::zeros(hh, alpha + if unknown { kk } else { 0 });
            if reduced {
                psi.column_mut(0).fill(1.0);
            }
            for k in 0..kk {
                let dk = integrator.apply(&column(&smoothed.est[i][k]));
                if unknown {
                    psi.set_column(alpha + k, &(-dk));
                } else {
                    z += dk * system.operator.omega[i][k];
                }
            }
            EquationBlock {
                z,
                psi,
                nuisance: NuisanceLayout {
                    alpha,
                    omega: if unknown { kk } else { 0 },
                },
                integrator: integrator.clone(),
                terms: vec![],
                phi: None,
                phi_offset: None,
            }
        })
        .collect();
    let method = if reduced {
        Method::GradKm1
    } else {
        Method::GradK
    };
    base_design(smoothed, system, method, cfg, blocks, unknown)
}
