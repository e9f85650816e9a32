use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DynamicSystem, TrajectorySet};
use crate::error::{invalid, Result};
use crate::quadrature::{linspace, trapezoid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    Equispaced,
    #[serde(alias = "uniform")]
    UniformIid,
}

impl std::str::FromStr for Sampling {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equispaced" => Ok(Sampling::Equispaced),
            "uniform" | "uniform_iid" => Ok(Sampling::UniformIid),
            other => invalid(format!("unknown sampling scheme '{other}'")),
        }
    }
}

/// Noisy samples `obs[i][j]` of variable `i` at `times[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledData {
    pub times: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub noise_sigma: Vec<f64>,
    pub gamma: f64,
    pub seed: u64,
    pub sampling: Sampling,
    pub horizon: f64,
}

impl SampledData {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.obs.len()
    }
}

/// Cubic Hermite interpolation of `value` with slopes `slope` on `grid`.
pub fn hermite_interpolate(grid: &[f64], value: &[f64], slope: &[f64], t: f64) -> f64 {
    let n = grid.len();
    if n == 1 {
        return value[0];
    }
    let j = grid.partition_point(|g| *g <= t).clamp(1, n - 1) - 1;
    let h = grid[j + 1] - grid[j];
    let u = (t - grid[j]) / h;
    let (u2, u3) = (u * u, u * u * u);
    let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
    let h10 = u3 - 2.0 * u2 + u;
    let h01 = -2.0 * u3 + 3.0 * u2;
    let h11 = u3 - u2;
    h00 * value[j] + h10 * h * slope[j] + h01 * value[j + 1] + h11 * h * slope[j + 1]
}

/// Draws `n` observation times and Gaussian noise with
/// `sigma_i = gamma * sqrt(mean of X_i^2 over [0, C])`.
pub fn simulate_observations(
    traj: &TrajectorySet,
    system: &DynamicSystem,
    n: usize,
    gamma: f64,
    sampling: Sampling,
    seed: u64,
) -> Result<SampledData> {
    if n < 2 {
        return invalid("need at least two observations");
    }
    if !(gamma >= 0.0) {
        return invalid("gamma must be non-negative");
    }
    if traj.dim() != system.dim || traj.grid.len() < 2 {
        return invalid("trajectory does not match system");
    }
    let c = system.horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = match sampling {
        Sampling::Equispaced => linspace(0.0, c, n),
        Sampling::UniformIid => {
            let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..=c)).collect();
            t.sort_by(|a, b| a.partial_cmp(b).unwrap());
            t
        }
    };
    let span = traj.grid[traj.grid.len() - 1] - traj.grid[0];
    let mut noise_sigma = Vec::with_capacity(system.dim);
    let mut obs = Vec::with_capacity(system.dim);
    for i in 0..system.dim {
        let sq: Vec<f64> = traj.level(i).iter().map(|x| x * x).collect();
        let sigma = gamma * (trapezoid(&traj.grid, &sq) / span).sqrt();
        noise_sigma.push(sigma);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let row = times
            .iter()
            .map(|t| {
                let truth =
                    hermite_interpolate(&traj.grid, traj.level(i), traj.derivative(i, 1), *t);
                let z: f64 = normal.sample(&mut rng);
                if sigma > 0.0 {
                    truth + sigma * z
                } else {
                    truth
                }
            })
            .collect();
        obs.push(row);
    }
    Ok(SampledData {
        times,
        obs,
        noise_sigma,
        gamma,
        seed,
        sampling,
        horizon: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{builtin_system, default_step, solve_forward, BuiltinSystem, Overrides};

    fn constant_traj(c: f64) -> TrajectorySet {
        let grid = linspace(0.0, c, 11);
        TrajectorySet {
            grid,
            values: vec![vec![vec![2.0; 11], vec![0.0; 11]]],
        }
    }

    #[test]
    fn sigma_from_constant_level() {
        let mut o = Overrides::new();
        o.insert("C".into(), 20.0);
        let sys = builtin_system(BuiltinSystem::Pendulum, &o).unwrap();
        let d = simulate_observations(
            &constant_traj(20.0),
            &sys,
            10,
            0.05,
            Sampling::Equispaced,
            1,
        )
        .unwrap();
        assert!((d.noise_sigma[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn noiseless_is_seed_free() {
        let sys = builtin_system(BuiltinSystem::Pendulum, &Overrides::new()).unwrap();
        let grid = linspace(0.0, sys.horizon, 2001);
        let traj = solve_forward(&sys, default_step(&sys), &grid).unwrap();
        let a = simulate_observations(&traj, &sys, 37, 0.0, Sampling::Equispaced, 1).unwrap();
        let b = simulate_observations(&traj, &sys, 37, 0.0, Sampling::Equispaced, 2).unwrap();
        assert_eq!(a.obs, b.obs);
        let c = simulate_observations(&traj, &sys, 37, 0.1, Sampling::UniformIid, 5).unwrap();
        let d = simulate_observations(&traj, &sys, 37, 0.1, Sampling::UniformIid, 5).unwrap();
        assert_eq!(c, d);
        assert!(c.times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn hermite_is_exact_on_cubics() {
        let grid = linspace(0.0, 2.0, 5);
        let f = |t: f64| t * t * t - 2.0 * t + 1.0;
        let df = |t: f64| 3.0 * t * t - 2.0;
        let v: Vec<f64> = grid.iter().map(|t| f(*t)).collect();
        let s: Vec<f64> = grid.iter().map(|t| df(*t)).collect();
        for t in [0.0, 0.13, 0.77, 1.5, 2.0] {
            assert!((hermite_interpolate(&grid, &v, &s, t) - f(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let sys = builtin_system(BuiltinSystem::Pendulum, &Overrides::new()).unwrap();
        let t = constant_traj(20.0);
        assert!(simulate_observations(&t, &sys, 1, 0.1, Sampling::Equispaced, 0).is_err());
        assert!(simulate_observations(&t, &sys, 5, -0.1, Sampling::Equispaced, 0).is_err());
    }
}
