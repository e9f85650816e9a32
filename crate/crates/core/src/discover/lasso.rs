use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoConfig {
    /// Largest coordinate change (standardized scale) accepted as converged.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Sweeps between attempts to finish exactly on the current active set.
    pub polish_every: usize,
    /// Penalize coefficients of unit-norm columns rather than of the raw
    /// columns.
    pub standardize: bool,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            tol: 1e-10,
            max_sweeps: 100_000,
            polish_every: 25,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub lambda: f64,
    /// Coefficients on the scale of the supplied design.
    pub coef: DVector<f64>,
    /// Coefficients the penalty acts on (of the unit-norm columns when
    /// standardizing).
    pub std_coef: DVector<f64>,
    pub rss: f64,
    pub df: usize,
    pub sweeps: usize,
}

/// `1/2 ||y - X b||^2 + lambda ||b||_1`, optionally over unit-norm columns of
/// `X`, solved by cyclic coordinate descent on the Gram matrix.
#[derive(Debug, Clone)]
pub struct Lasso {
    x: DMatrix<f64>,
    xs: DMatrix<f64>,
    y: DVector<f64>,
    scales: Vec<f64>,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    cfg: LassoConfig,
}

fn soft(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

impl Lasso {
    pub fn new(x: &DMatrix<f64>, y: &DVector<f64>, cfg: LassoConfig) -> Result<Self> {
        if x.nrows() != y.len() {
            return invalid("lasso design and response differ in length");
        }
        if x.ncols() == 0 {
            return invalid("lasso needs at least one feature");
        }
        let scales: Vec<f64> = x
            .column_iter()
            .map(|c| {
                let n = c.norm();
                if cfg.standardize || n == 0.0 {
                    n
                } else {
                    1.0
                }
            })
            .collect();
        let mut xs = x.clone();
        for (j, s) in scales.iter().enumerate() {
            if *s > 0.0 {
                xs.column_mut(j).unscale_mut(*s);
            } else {
                xs.column_mut(j).fill(0.0);
            }
        }
        let gram = xs.transpose() * &xs;
        let xty = xs.transpose() * y;
        Ok(Lasso {
            x: x.clone(),
            xs,
            y: y.clone(),
            scales,
            gram,
            xty,
            cfg,
        })
    }

    pub fn num_features(&self) -> usize {
        self.scales.len()
    }

    /// Design whose coefficients are penalized (unit-norm columns when
    /// standardizing).
    pub fn standardized_design(&self) -> &DMatrix<f64> {
        &self.xs
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.y
    }

    /// Smallest `lambda` at which every coefficient is zero.
    pub fn lambda_max(&self) -> f64 {
        self.xty.amax()
    }

    fn usable(&self, j: usize) -> bool {
        self.scales[j] > 0.0
    }

    fn finish(&self, lambda: f64, b: DVector<f64>, sweeps: usize) -> LassoFit {
        let coef = DVector::from_iterator(
            b.len(),
            b.iter()
                .zip(&self.scales)
                .map(|(v, s)| if *s > 0.0 { v / s } else { 0.0 }),
        );
        let rss = (&self.y - &self.xs * &b).norm_squared();
        let df = b.iter().filter(|v| **v != 0.0).count();
        LassoFit {
            lambda,
            coef,
            std_coef: b,
            rss,
            df,
            sweeps,
        }
    }

    /// Unpenalized least-squares fit.
    pub fn least_squares(&self) -> Result<LassoFit> {
        let ls = least_squares(&self.x, &self.y)?;
        let b = DVector::from_iterator(
            ls.x.len(),
            ls.x.iter().zip(&self.scales).map(|(v, s)| v * s),
        );
        let mut fit = self.finish(0.0, b, 0);
        fit.coef = ls.x;
        Ok(fit)
    }

    /// `1/2 b^T G b - (X^T y)^T b + lambda |b|_1`, the objective up to a constant.
    fn reduced_objective(&self, b: &DVector<f64>, lambda: f64) -> f64 {
        0.5 * b.dot(&(&self.gram * b)) - self.xty.dot(b) + lambda * b.abs().sum()
    }

    /// Feature-sign active-set refinement started from `b`. Each step solves
    /// the sign-constrained problem on the active set exactly and moves to the
    /// best of that solution and the zero crossings on the way to it. Returns
    /// the optimum once the optimality conditions hold within rounding.
    fn polish(&self, b: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
        let q = b.len();
        let tol = 1e-10 * self.lambda_max();
        let mut cur = b.clone();
        for _ in 0..(50 * q.max(1)) {
            let c = self.correlations(&cur);
            let mut signs: Vec<f64> = cur
                .iter()
                .map(|v| if *v == 0.0 { 0.0 } else { v.signum() })
                .collect();
            let active_ok =
                (0..q).all(|j| cur[j] == 0.0 || (c[j] - lambda * signs[j]).abs() <= tol);
            if active_ok {
                let entering = (0..q)
                    .filter(|j| self.usable(*j) && cur[*j] == 0.0 && c[*j].abs() > lambda + tol)
                    .max_by(|a, b| c[*a].abs().total_cmp(&c[*b].abs()));
                match entering {
                    None => return Some(cur),
                    Some(j) => signs[j] = c[j].signum(),
                }
            }
            let active: Vec<usize> = (0..q).filter(|j| signs[*j] != 0.0).collect();
            let a = active.len();
            let g = DMatrix::from_fn(a, a, |r, cc| self.gram[(active[r], active[cc])]);
            let rhs = DVector::from_fn(a, |r, _| self.xty[active[r]] - lambda * signs[active[r]]);
            let sol = g.cholesky()?.solve(&rhs);
            let mut target = DVector::zeros(q);
            for (r, j) in active.iter().enumerate() {
                target[*j] = sol[r];
            }
            let mut candidates = vec![target.clone()];
            for j in &active {
                let (s0, s1) = (cur[*j], target[*j]);
                if s0 != 0.0 && s0.signum() != s1.signum() {
                    let t = s0 / (s0 - s1);
                    let mut p = &cur + (&target - &cur) * t;
                    p[*j] = 0.0;
                    candidates.push(p);
                }
            }
            let now = self.reduced_objective(&cur, lambda);
            let (best, val) = candidates
                .into_iter()
                .map(|p| {
                    let v = self.reduced_objective(&p, lambda);
                    (p, v)
                })
                .min_by(|x, y| x.1.total_cmp(&y.1))?;
            if !(val <= now + 1e-14 * now.abs().max(1.0)) {
                return None;
            }
            cur = best.map(|v| if v.abs() < 1e-300 { 0.0 } else { v });
        }
        None
    }

    /// Gradient of the smooth part at standardized coefficients `b`,
    /// `X^T (y - X b)`.
    pub fn correlations(&self, b: &DVector<f64>) -> DVector<f64> {
        &self.xty - &self.gram * b
    }

    /// Largest violation of the optimality conditions at `b`: distance of the
    /// gradient from `lambda * sign(b)` on the active set and its excess over
    /// `lambda` elsewhere.
    pub fn kkt_violation(&self, b: &DVector<f64>, lambda: f64) -> f64 {
        let c = self.correlations(b);
        (0..b.len())
            .filter(|j| self.usable(*j))
            .map(|j| {
                if b[j] != 0.0 {
                    (c[j] - lambda * b[j].signum()).abs()
                } else {
                    (c[j].abs() - lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn objective(&self, b: &DVector<f64>, lambda: f64) -> f64 {
        0.5 * (&self.y - &self.xs * b).norm_squared() + lambda * b.abs().sum()
    }

    /// Solves at `lambda`, starting from the standardized coefficients `warm`.
    pub fn solve(&self, lambda: f64, warm: Option<&DVector<f64>>) -> Result<LassoFit> {
        if !(lambda >= 0.0) {
            return invalid("lambda must be non-negative");
        }
        if lambda == 0.0 {
            return self.least_squares();
        }
        let q = self.num_features();
        if lambda >= self.lambda_max() {
            return Ok(self.finish(lambda, DVector::zeros(q), 0));
        }
        let mut b = warm.cloned().unwrap_or_else(|| DVector::zeros(q));
        let mut c = self.correlations(&b);
        for sweep in 1..=self.cfg.max_sweeps {
            let mut delta_max: f64 = 0.0;
            for j in 0..q {
                if !self.usable(j) {
                    continue;
                }
                let gjj = self.gram[(j, j)];
                let new = soft(c[j] + gjj * b[j], lambda) / gjj;
                let delta = new - b[j];
                if delta != 0.0 {
                    c.axpy(-delta, &self.gram.column(j), 1.0);
                    b[j] = new;
                    delta_max = delta_max.max(delta.abs());
                }
            }
            let converged = delta_max <= self.cfg.tol;
            if converged || sweep % self.cfg.polish_every.max(1) == 0 {
                if let Some(exact) = self.polish(&b, lambda) {
                    return Ok(self.finish(lambda, exact, sweep));
                }
            }
            if converged {
                return Ok(self.finish(lambda, b, sweep));
            }
            if sweep % 1000 == 0 {
                // Drift control for long runs.
                c = self.correlations(&b);
            }
        }
        Err(Error::LassoNonConvergence {
            sweeps: self.cfg.max_sweeps,
            lambda,
        })
    }
}

/// `count` log-spaced values from `lambda_max` down to `lambda_max * ratio`.
pub fn lambda_grid(lambda_max: f64, count: usize, ratio: f64) -> Vec<f64> {
    if count == 0 || !(lambda_max > 0.0) {
        return vec![];
    }
    if count == 1 {
        return vec![lambda_max];
    }
    let lo = ratio.ln();
    (0..count)
        .map(|i| lambda_max * (lo * i as f64 / (count - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(seed: u64, rows: usize, cols: usize) -> (DMatrix<f64>, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(rows, |_, _| rng.random_range(-2.0..2.0));
        (x, y)
    }

    #[test]
    fn zero_above_lambda_max() {
        let (x, y) = random_problem(1, 12, 4);
        let l = Lasso::new(&x, &y, LassoConfig::default()).unwrap();
        let fit = l.solve(l.lambda_max() * 1.0001, None).unwrap();
        assert!(fit.coef.iter().all(|v| *v == 0.0));
        let fit = l.solve(l.lambda_max(), None).unwrap();
        assert_eq!(fit.df, 0);
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        let (x, y) = random_problem(2, 12, 5);
        let l = Lasso::new(&x, &y, LassoConfig::default()).unwrap();
        let fit = l.solve(0.0, None).unwrap();
        let ls = (x.transpose() * &x)
            .cholesky()
            .unwrap()
            .solve(&(x.transpose() * &y));
        assert!((fit.coef - ls).amax() < 1e-8);
    }

    #[test]
    fn kkt_on_path() {
        let (x, y) = random_problem(3, 10, 6);
        let l = Lasso::new(&x, &y, LassoConfig::default()).unwrap();
        let mut warm = DVector::zeros(6);
        for lam in lambda_grid(l.lambda_max(), 20, 1e-3) {
            let fit = l.solve(lam, Some(&warm)).unwrap();
            assert!(l.kkt_violation(&fit.std_coef, lam) < 1e-6, "lambda {lam}");
            warm = fit.std_coef;
        }
    }

    #[test]
    fn zero_column_stays_zero() {
        let (mut x, y) = random_problem(4, 10, 3);
        x.column_mut(1).fill(0.0);
        let l = Lasso::new(&x, &y, LassoConfig::default()).unwrap();
        let fit = l.solve(0.1 * l.lambda_max(), None).unwrap();
        assert_eq!(fit.coef[1], 0.0);
    }

    #[test]
    fn grid_endpoints() {
        let g = lambda_grid(2.0, 50, 1e-4);
        assert_eq!(g.len(), 50);
        assert!((g[0] - 2.0).abs() < 1e-15 && (g[49] - 2e-4).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn rejects_negative_lambda() {
        let (x, y) = random_problem(5, 6, 2);
        let l = Lasso::new(&x, &y, LassoConfig::default()).unwrap();
        assert!(l.solve(-1.0, None).is_err());
    }
}
