use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};

pub type FeatureFn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar candidate functions `g_l(X)` for a one-dimensional state.
#[derive(Clone)]
pub struct CandidateLibrary {
    names: Vec<String>,
    funcs: Vec<FeatureFn1>,
}

impl fmt::Debug for CandidateLibrary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CandidateLibrary")
            .field("names", &self.names)
            .finish()
    }
}

impl CandidateLibrary {
    pub fn new(features: Vec<(String, FeatureFn1)>) -> Result<Self> {
        if features.is_empty() {
            return invalid("candidate library is empty");
        }
        let (names, funcs) = features.into_iter().unzip();
        Ok(CandidateLibrary { names, funcs })
    }

    /// `1, X, X^2, X^3, X^4, sin X, cos X`.
    pub fn pendulum() -> Self {
        let f = |name: &str, g: fn(f64) -> f64| (name.to_string(), Arc::new(g) as FeatureFn1);
        CandidateLibrary::new(vec![
            f("1", |_| 1.0),
            f("X", |x| x),
            f("X^2", |x| x * x),
            f("X^3", |x| x.powi(3)),
            f("X^4", |x| x.powi(4)),
            f("sin X", f64::sin),
            f("cos X", f64::cos),
        ])
        .expect("non-empty")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        for (o, g) in out.iter_mut().zip(&self.funcs) {
            *o = g(x);
        }
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        out
    }

    /// `g(x)^T beta`.
    pub fn combine(&self, x: f64, beta: &[f64]) -> f64 {
        self.funcs
            .iter()
            .zip(beta)
            .map(|(g, b)| if *b == 0.0 { 0.0 } else { g(x) * b })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pendulum_library_layout() {
        let lib = CandidateLibrary::pendulum();
        assert_eq!(lib.len(), 7);
        assert_eq!(
            lib.names(),
            ["1", "X", "X^2", "X^3", "X^4", "sin X", "cos X"]
        );
        let v = lib.eval(2.0);
        assert_eq!(&v[..5], &[1.0, 2.0, 4.0, 8.0, 16.0]);
        assert!((v[5] - 2f64.sin()).abs() < 1e-15);
        assert!(CandidateLibrary::new(vec![]).is_err());
    }
}
