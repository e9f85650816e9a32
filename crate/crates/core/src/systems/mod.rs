//! ODE model abstraction, built-in benchmark systems, forward solver and the
//! observation generator.

mod builtin;
mod observe;
mod solver;

use std::fmt;
use std::sync::Arc;

pub use builtin::{builtin_system, BuiltinSystem, Overrides};
pub use observe::{hermite_interpolate, simulate_observations, SampledData, Sampling};
pub use solver::{default_step, solve_forward, solve_from, TrajectorySet};

use crate::error::{invalid, Result};

/// `drive(x, t, beta, out)` writes `f_i(x, t; beta)` for every `i`.
pub type DriveFn = Arc<dyn Fn(&[f64], f64, &[f64], &mut [f64]) + Send + Sync>;

/// `eval(i, x, t, out)` writes the features of equation `i` (aligned with
/// `SeparableForm::terms[i]`) and returns the parameter-free offset, so that
/// `f_i = sum_j out[j] * beta[terms[i][j]] + offset`.
pub type FeatureFn = Arc<dyn Fn(usize, &[f64], f64, &mut [f64]) -> f64 + Send + Sync>;

/// Linear-in-parameters representation of the drive.
#[derive(Clone)]
pub struct SeparableForm {
    pub terms: Vec<Vec<usize>>,
    pub eval: FeatureFn,
}

impl SeparableForm {
    /// True when every parameter appears in at most one equation, so the
    /// per-equation least-squares problems decouple.
    pub fn is_block_disjoint(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.terms.iter().flatten().all(|p| seen.insert(*p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Coefficients `omega[i][k]` of `D^k` in the operator of equation `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCoeffs {
    pub omega: Vec<Vec<f64>>,
    pub known: bool,
    pub names: Vec<Vec<String>>,
}

#[derive(Clone)]
pub struct DynamicSystem {
    pub name: String,
    pub dim: usize,
    pub order: usize,
    pub horizon: f64,
    pub drive: DriveFn,
    pub separable: Option<SeparableForm>,
    pub params: ParamLayout,
    pub operator: OperatorCoeffs,
    /// `initial[i][k] = D^k X_i(0)` for `k < order`.
    pub initial: Vec<Vec<f64>>,
    /// Times where the drive is discontinuous in `t`.
    pub breakpoints: Vec<f64>,
}

impl fmt::Debug for DynamicSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicSystem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("order", &self.order)
            .field("horizon", &self.horizon)
            .field("params", &self.params.len())
            .field("separable", &self.separable.is_some())
            .field("operator_known", &self.operator.known)
            .finish()
    }
}

impl DynamicSystem {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.order == 0 {
            return invalid("system needs p >= 1 and K >= 1");
        }
        if !(self.horizon > 0.0) {
            return invalid("horizon C must be positive");
        }
        if self.params.names.len() != self.params.truth.len() {
            return invalid("parameter names and truth differ in length");
        }
        if self.operator.omega.len() != self.dim
            || self.operator.omega.iter().any(|w| w.len() != self.order)
        {
            return invalid("operator coefficients must be p x K");
        }
        if self.initial.len() != self.dim || self.initial.iter().any(|v| v.len() != self.order) {
            return invalid("initial conditions must be p x K");
        }
        if let Some(sep) = &self.separable {
            if sep.terms.len() != self.dim {
                return invalid("separable form needs one term list per equation");
            }
            if sep.terms.iter().flatten().any(|p| *p >= self.params.len()) {
                return invalid("separable term refers to an unknown parameter");
            }
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn eval_drive(&self, x: &[f64], t: f64, beta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.drive)(x, t, beta, &mut out);
        out
    }

    /// Drive assembled from the separable form, if present.
    pub fn eval_separable(&self, x: &[f64], t: f64, beta: &[f64]) -> Option<Vec<f64>> {
        let sep = self.separable.as_ref()?;
        let out = (0..self.dim)
            .map(|i| {
                let mut g = vec![0.0; sep.terms[i].len()];
                let offset = (sep.eval)(i, x, t, &mut g);
                offset
                    + g.iter()
                        .zip(&sep.terms[i])
                        .map(|(v, p)| v * beta[*p])
                        .sum::<f64>()
            })
            .collect();
        Some(out)
    }

    /// Names of every estimated quantity: `beta`, then `omega` row-major when
    /// the operator is unknown.
    pub fn estimand_names(&self) -> Vec<String> {
        let mut names = self.params.names.clone();
        if !self.operator.known {
            names.extend(self.operator.names.iter().flatten().cloned());
        }
        names
    }

    pub fn estimand_truth(&self) -> Vec<f64> {
        let mut v = self.params.truth.clone();
        if !self.operator.known {
            v.extend(self.operator.omega.iter().flatten().copied());
        }
        v
    }

    /// Copy of the system with the separable form dropped, forcing the
    /// general (Gauss-Newton) estimation path.
    pub fn without_features(&self) -> Self {
        let mut s = self.clone();
        s.separable = None;
        s
    }

    pub fn with_operator_known(&self, known: bool) -> Self {
        let mut s = self.clone();
        s.operator.known = known;
        s
    }
}
