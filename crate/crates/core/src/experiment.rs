//! Experiment configuration and the Monte Carlo driver shared by the
//! command-line tool and the benchmark tests.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discover::DiscoveryConfig;
use crate::error::{invalid, Error, Result};
use crate::infer::{compute_metrics, MetricsRow};
use crate::matching::{MatchConfig, Method};
use crate::pipeline::{
    reference_trajectory, run_replication, Replication, SamplingPlan, SmoothingOptions,
};
use crate::systems::{builtin_system, BuiltinSystem, DynamicSystem, Overrides, Sampling};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: BuiltinSystem,
    /// Parameter and structural overrides of the built-in system.
    pub overrides: Overrides,
    pub n: usize,
    pub gamma: f64,
    pub reps: usize,
    pub seed0: u64,
    pub methods: Vec<Method>,
    pub sampling: Sampling,
    pub confidence_level: f64,
    /// Worker threads; all cores when absent.
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub smoothing: SmoothingOptions,
    pub matching: MatchConfig,
    pub discovery: DiscoveryConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            system: BuiltinSystem::GeneNetwork,
            overrides: Overrides::new(),
            n: 250,
            gamma: 0.03,
            reps: 20,
            seed0: 1,
            methods: Method::ALL.to_vec(),
            sampling: Sampling::Equispaced,
            confidence_level: 0.95,
            threads: None,
            out: PathBuf::from("out"),
            smoothing: SmoothingOptions::default(),
            matching: MatchConfig::default(),
            discovery: DiscoveryConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return invalid("reps must be at least 1");
        }
        if self.methods.is_empty() {
            return invalid("at least one method is required");
        }
        if self.n < 2 {
            return invalid("n must be at least 2");
        }
        if !(self.gamma >= 0.0) {
            return invalid("gamma must be non-negative");
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return invalid("confidence level must lie in (0, 1)");
        }
        if self.threads == Some(0) {
            return invalid("threads must be positive");
        }
        if self.discovery.reps == 0 {
            return invalid("discovery reps must be at least 1");
        }
        self.matching.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build_system(&self) -> Result<DynamicSystem> {
        builtin_system(self.system, &self.overrides)
    }

    pub fn plan(&self) -> SamplingPlan {
        SamplingPlan {
            n: self.n,
            gamma: self.gamma,
            sampling: self.sampling,
        }
    }
}

/// One replication, or the reason it could not be smoothed.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub replication: std::result::Result<Replication, String>,
}

impl RepRecord {
    /// Estimates of `method`, or the error that prevented them.
    pub fn estimates(&self, method: Method) -> std::result::Result<Vec<f64>, String> {
        let rep = self.replication.as_ref().map_err(|e| e.clone())?;
        let out = rep
            .outcomes
            .iter()
            .find(|o| o.method == method)
            .ok_or_else(|| format!("method {method} was not run"))?;
        out.report
            .as_ref()
            .map(|r| r.estimates())
            .map_err(|e| e.clone())
    }

    pub fn seconds(&self, method: Method) -> Option<f64> {
        let rep = self.replication.as_ref().ok()?;
        rep.outcomes
            .iter()
            .find(|o| o.method == method)
            .map(|o| o.seconds)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub system: DynamicSystem,
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub methods: Vec<Method>,
    pub records: Vec<RepRecord>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: Method,
    /// Absent when no replication succeeded.
    pub metrics: Option<MetricsRow>,
    pub used: usize,
    pub failed: usize,
    pub mean_seconds: f64,
}

impl ExperimentRun {
    pub fn metrics(&self, method: Method) -> Result<MethodMetrics> {
        let mut ests = Vec::new();
        let mut failed = 0;
        for r in &self.records {
            match r.estimates(method) {
                Ok(e) if e.iter().all(|v| v.is_finite()) => ests.push(e),
                _ => failed += 1,
            }
        }
        let secs: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| r.seconds(method))
            .collect();
        let mean_seconds = if secs.is_empty() {
            f64::NAN
        } else {
            secs.iter().sum::<f64>() / secs.len() as f64
        };
        let metrics = if ests.is_empty() {
            None
        } else {
            Some(compute_metrics(&ests, &self.truth, &self.names)?)
        };
        Ok(MethodMetrics {
            method,
            metrics,
            used: ests.len(),
            failed,
            mean_seconds,
        })
    }
}

/// Runs `cfg.reps` replications with seeds `seed0 + rep`, in parallel.
/// Failures are kept per replication and method.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let start = Instant::now();
    let system = cfg.build_system()?;
    let truth_traj = reference_trajectory(&system)?;
    let records = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = cfg.seed0.wrapping_add(rep as u64);
            let replication = run_replication(
                &system,
                &truth_traj,
                cfg.plan(),
                seed,
                &cfg.methods,
                &cfg.smoothing,
                &cfg.matching,
            )
            .map_err(|e| e.to_string());
            RepRecord {
                rep,
                seed,
                replication,
            }
        })
        .collect();
    Ok(ExperimentRun {
        names: system.estimand_names(),
        truth: system.estimand_truth(),
        methods: cfg.methods.clone(),
        system,
        records,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.overrides.insert("p".into(), 5.0);
        cfg.gamma = 0.07;
        cfg.threads = Some(3);
        cfg.methods = vec![Method::Greens, Method::GradKm1];
        cfg.smoothing.bandwidth = crate::smooth::BandwidthRule::Fixed(0.75);
        cfg.matching.weights = Some(vec![0.0, 1.0, 0.5]);
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let plain = ExperimentConfig::default();
        assert_eq!(
            ExperimentConfig::from_toml(&plain.to_toml().unwrap()).unwrap(),
            plain
        );
    }

    #[test]
    fn partial_files_and_validation() {
        let cfg =
            ExperimentConfig::from_toml("system = \"oddm\"\nreps = 3\n[matching]\ntrim = 0.1\n")
                .unwrap();
        assert_eq!(cfg.system, BuiltinSystem::Oddm);
        assert_eq!(cfg.matching.trim, 0.1);
        assert_eq!(cfg.n, 250);
        assert!(ExperimentConfig::from_toml("reps = 0").is_err());
        assert!(ExperimentConfig::from_toml("methods = []").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn failed_replications_are_kept() {
        let cfg = ExperimentConfig {
            system: BuiltinSystem::Pendulum,
            n: 3,
            reps: 2,
            smoothing: SmoothingOptions {
                bandwidth: crate::smooth::BandwidthRule::Fixed(0.5),
                grid_points: 101,
            },
            ..ExperimentConfig::default()
        };
        let run = run_experiment(&cfg).unwrap();
        assert_eq!(run.records.len(), 2);
        let m = run.metrics(Method::Greens).unwrap();
        assert_eq!(m.used + m.failed, 2);
        assert_eq!(m.failed, 2);
        assert!(m.metrics.is_none());
    }
}
