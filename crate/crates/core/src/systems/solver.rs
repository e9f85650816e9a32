use super::DynamicSystem;
use crate::error::{invalid, Error, Result};

/// Trajectories and their derivatives on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub grid: Vec<f64>,
    /// `values[i][k][g] = D^k X_i(grid[g])` for `k = 0..=K`.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl TrajectorySet {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn order(&self) -> usize {
        self.values.first().map_or(0, |v| v.len().saturating_sub(1))
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.values[i][0]
    }

    pub fn derivative(&self, i: usize, k: usize) -> &[f64] {
        &self.values[i][k]
    }

    /// State `(D^0 X, ..., D^{K-1} X)` of every variable at grid index `g`.
    pub fn state_at(&self, g: usize) -> Vec<Vec<f64>> {
        let k = self.order();
        self.values
            .iter()
            .map(|v| (0..k).map(|j| v[j][g]).collect())
            .collect()
    }
}

/// Default fixed RK4 step, `C / 20000`.
pub fn default_step(system: &DynamicSystem) -> f64 {
    system.horizon / 20000.0
}

/// Integrates the system from its stored initial conditions at `t = 0`
/// with its reference parameters.
pub fn solve_forward(
    system: &DynamicSystem,
    step: f64,
    output_grid: &[f64],
) -> Result<TrajectorySet> {
    if output_grid
        .iter()
        .any(|t| *t < 0.0 || *t > system.horizon * (1.0 + 1e-12))
    {
        return invalid("output grid must lie in [0, C]");
    }
    solve_from(
        system,
        &system.params.truth,
        &system.operator.omega,
        0.0,
        &system.initial,
        step,
        output_grid,
    )
}

struct Rhs<'a> {
    system: &'a DynamicSystem,
    beta: &'a [f64],
    omega: &'a [Vec<f64>],
    x: Vec<f64>,
    f: Vec<f64>,
}

impl<'a> Rhs<'a> {
    fn eval(&mut self, y: &[f64], t: f64, dy: &mut [f64]) {
        let kk = self.system.order;
        for i in 0..self.system.dim {
            self.x[i] = y[i * kk];
        }
        (self.system.drive)(&self.x, t, self.beta, &mut self.f);
        for i in 0..self.system.dim {
            let base = i * kk;
            for k in 0..kk - 1 {
                dy[base + k] = y[base + k + 1];
            }
            let damping: f64 = (0..kk).map(|k| self.omega[i][k] * y[base + k]).sum();
            dy[base + kk - 1] = self.f[i] - damping;
        }
    }
}

/// Classical RK4 on the first-order companion form, started from `initial`
/// at time `start`. Grid points before `start` are reached by integrating
/// backwards. Every segment between consecutive stops (grid points and drive
/// breakpoints) is split into equal sub-steps no longer than `step`, and the
/// drive is evaluated one-sidedly at breakpoints so no step straddles a
/// discontinuity.
pub fn solve_from(
    system: &DynamicSystem,
    beta: &[f64],
    omega: &[Vec<f64>],
    start: f64,
    initial: &[Vec<f64>],
    step: f64,
    output_grid: &[f64],
) -> Result<TrajectorySet> {
    if !(step > 0.0) {
        return invalid("step must be positive");
    }
    if output_grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("output grid must be strictly increasing");
    }
    let (p, kk) = (system.dim, system.order);
    if initial.len() != p || initial.iter().any(|v| v.len() != kk) {
        return invalid("initial state must be p x K");
    }
    let y0: Vec<f64> = initial.iter().flatten().copied().collect();
    let mut values = vec![vec![vec![0.0; output_grid.len()]; kk + 1]; p];
    let mut rhs = Rhs {
        system,
        beta,
        omega,
        x: vec![0.0; p],
        f: vec![0.0; p],
    };

    let split = output_grid.partition_point(|t| *t < start);
    let forward: Vec<usize> = (split..output_grid.len()).collect();
    let backward: Vec<usize> = (0..split).rev().collect();
    for targets in [forward, backward] {
        if targets.is_empty() {
            continue;
        }
        let mut y = y0.clone();
        let mut t = start;
        let last = output_grid[*targets.last().unwrap()];
        let sign = if last >= start { 1.0 } else { -1.0 };
        let mut stops: Vec<(f64, Option<usize>)> = targets
            .iter()
            .map(|g| (output_grid[*g], Some(*g)))
            .collect();
        for b in &system.breakpoints {
            if (b - start) * sign > 0.0 && (last - b) * sign > 0.0 {
                stops.push((*b, None));
            }
        }
        stops.sort_by(|a, b| (sign * a.0).partial_cmp(&(sign * b.0)).unwrap());
        for (stop, target) in stops {
            if stop != t {
                integrate_segment(&mut rhs, &mut y, t, stop, step, &system.breakpoints)?;
                t = stop;
            }
            if let Some(g) = target {
                record(&mut rhs, &y, t, g, &mut values);
            }
        }
    }
    Ok(TrajectorySet {
        grid: output_grid.to_vec(),
        values,
    })
}

fn is_breakpoint(t: f64, breakpoints: &[f64]) -> bool {
    breakpoints
        .iter()
        .any(|b| (b - t).abs() <= 1e-12 * (1.0 + b.abs()))
}

fn integrate_segment(
    rhs: &mut Rhs<'_>,
    y: &mut [f64],
    a: f64,
    b: f64,
    step: f64,
    breakpoints: &[f64],
) -> Result<()> {
    let n = ((b - a).abs() / step - 1e-9).ceil().max(1.0) as usize;
    let len = y.len();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
    );
    let a_break = is_breakpoint(a, breakpoints);
    let b_break = is_breakpoint(b, breakpoints);
    for s in 0..n {
        let t0 = a + (b - a) * (s as f64 / n as f64);
        let t1 = if s + 1 == n {
            b
        } else {
            a + (b - a) * ((s + 1) as f64 / n as f64)
        };
        let h = t1 - t0;
        let nudge = 1e-9 * h;
        let e0 = if s == 0 && a_break { t0 + nudge } else { t0 };
        let e1 = if s + 1 == n && b_break {
            t1 - nudge
        } else {
            t1
        };
        let mid = 0.5 * (t0 + t1);

        rhs.eval(y, e0, &mut k1);
        for j in 0..len {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        rhs.eval(&tmp, mid, &mut k2);
        for j in 0..len {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        rhs.eval(&tmp, mid, &mut k3);
        for j in 0..len {
            tmp[j] = y[j] + h * k3[j];
        }
        rhs.eval(&tmp, e1, &mut k4);
        for j in 0..len {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t1 });
        }
    }
    Ok(())
}

fn record(rhs: &mut Rhs<'_>, y: &[f64], t: f64, g: usize, values: &mut [Vec<Vec<f64>>]) {
    let kk = rhs.system.order;
    let mut dy = vec![0.0; y.len()];
    rhs.eval(y, t, &mut dy);
    for (i, v) in values.iter_mut().enumerate() {
        for k in 0..kk {
            v[k][g] = y[i * kk + k];
        }
        v[kk][g] = dy[i * kk + kk - 1];
    }
}
