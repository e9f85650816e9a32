use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{DynamicSystem, OperatorCoeffs, ParamLayout, SeparableForm};
use crate::error::{Error, Result};

/// Parameter and structural overrides keyed by name. Structural keys are
/// `p`, `C`, `x0_<i>` and `dx0_<i>` (1-based); any other key must name a
/// declared parameter or operator coefficient.
pub type Overrides = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinSystem {
    GeneNetwork,
    SpringMass,
    Oddm,
    Harmonic,
    Pendulum,
}

impl BuiltinSystem {
    pub const ALL: [BuiltinSystem; 5] = [
        BuiltinSystem::GeneNetwork,
        BuiltinSystem::SpringMass,
        BuiltinSystem::Oddm,
        BuiltinSystem::Harmonic,
        BuiltinSystem::Pendulum,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuiltinSystem::GeneNetwork => "gene_network",
            BuiltinSystem::SpringMass => "spring_mass",
            BuiltinSystem::Oddm => "oddm",
            BuiltinSystem::Harmonic => "harmonic",
            BuiltinSystem::Pendulum => "pendulum",
        }
    }
}

impl fmt::Display for BuiltinSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BuiltinSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BuiltinSystem::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::UnknownSystem(s.to_string()))
    }
}

const HARMONIC_STEPS: usize = 6;

/// Builds one of the benchmark systems with its reference parameters,
/// initial conditions and horizon, then applies `overrides`.
pub fn builtin_system(which: BuiltinSystem, overrides: &Overrides) -> Result<DynamicSystem> {
    let structural = |key: &str| overrides.get(key).copied();
    let dim_override = structural("p").map(|v| v.round() as usize);
    let default_horizon = match which {
        BuiltinSystem::Harmonic => 6.0,
        _ => 20.0,
    };
    let horizon = structural("C").unwrap_or(default_horizon);
    let mut sys = match which {
        BuiltinSystem::GeneNetwork => gene_network(dim_override.unwrap_or(50), horizon),
        BuiltinSystem::SpringMass => spring_mass(dim_override.unwrap_or(10), horizon),
        BuiltinSystem::Oddm => oddm(dim_override.unwrap_or(50), horizon),
        BuiltinSystem::Harmonic => harmonic(horizon),
        BuiltinSystem::Pendulum => pendulum(horizon),
    };
    if dim_override.is_some() && matches!(which, BuiltinSystem::Harmonic | BuiltinSystem::Pendulum)
    {
        return Err(Error::UnknownParameter {
            system: sys.name,
            name: "p".into(),
        });
    }
    for (key, value) in overrides {
        if key == "p" || key == "C" {
            continue;
        }
        if let Some(rest) = key.strip_prefix("dx0_") {
            set_initial(&mut sys, key, rest, 1, *value)?;
        } else if let Some(rest) = key.strip_prefix("x0_") {
            set_initial(&mut sys, key, rest, 0, *value)?;
        } else if let Some(j) = sys.params.index_of(key) {
            sys.params.truth[j] = *value;
        } else if let Some((i, k)) = find_operator_name(&sys.operator, key) {
            sys.operator.omega[i][k] = *value;
        } else {
            return Err(Error::UnknownParameter {
                system: sys.name,
                name: key.clone(),
            });
        }
    }
    sys.validate()?;
    Ok(sys)
}

fn find_operator_name(op: &OperatorCoeffs, key: &str) -> Option<(usize, usize)> {
    op.names
        .iter()
        .enumerate()
        .find_map(|(i, row)| row.iter().position(|n| n == key).map(|k| (i, k)))
}

fn set_initial(
    sys: &mut DynamicSystem,
    key: &str,
    index: &str,
    k: usize,
    value: f64,
) -> Result<()> {
    let unknown = || Error::UnknownParameter {
        system: sys.name.clone(),
        name: key.to_string(),
    };
    let i: usize = index.parse().map_err(|_| unknown())?;
    if i == 0 || i > sys.dim || k >= sys.order {
        return Err(unknown());
    }
    sys.initial[i - 1][k] = value;
    Ok(())
}

fn zero_operator(dim: usize, order: usize) -> OperatorCoeffs {
    OperatorCoeffs {
        omega: vec![vec![0.0; order]; dim],
        known: true,
        names: (0..dim)
            .map(|i| {
                (0..order)
                    .map(|k| format!("omega{}_{}", i + 1, k))
                    .collect()
            })
            .collect(),
    }
}

fn gene_network(p: usize, horizon: f64) -> DynamicSystem {
    let wrap = move |i: isize| -> usize { i.rem_euclid(p as isize) as usize };
    let mut names = Vec::with_capacity(3 * p);
    let mut truth = Vec::with_capacity(3 * p);
    for i in 1..=p {
        for (j, v) in [0.5, 1.0, 0.1].into_iter().enumerate() {
            names.push(format!("a{}_{}", i, j + 1));
            truth.push(v);
        }
    }
    let features = move |i: usize, x: &[f64], _t: f64, out: &mut [f64]| -> f64 {
        out[0] = (0.5 * x[i]).sin();
        out[1] = -(0.5 * x[wrap(i as isize + 5)]).cos();
        out[2] = x[wrap(i as isize - 3)];
        0.0
    };
    let drive = move |x: &[f64], t: f64, beta: &[f64], out: &mut [f64]| {
        let mut g = [0.0; 3];
        for i in 0..p {
            features(i, x, t, &mut g);
            out[i] = g[0] * beta[3 * i] + g[1] * beta[3 * i + 1] + g[2] * beta[3 * i + 2];
        }
    };
    let denom = (p.max(2) - 1) as f64;
    DynamicSystem {
        name: "gene_network".into(),
        dim: p,
        order: 1,
        horizon,
        drive: Arc::new(drive),
        separable: Some(SeparableForm {
            terms: (0..p).map(|i| vec![3 * i, 3 * i + 1, 3 * i + 2]).collect(),
            eval: Arc::new(features),
        }),
        params: ParamLayout { names, truth },
        operator: zero_operator(p, 1),
        initial: (0..p).map(|i| vec![5.0 - 4.0 / denom * i as f64]).collect(),
        breakpoints: vec![],
    }
}

const SPRING_REST: f64 = 2.0;
const GRAVITY: f64 = 9.8;

fn spring_mass(p: usize, horizon: f64) -> DynamicSystem {
    // Equation i involves spring i (to the left neighbour, or the wall at 0)
    // and spring i + 1 (to the right neighbour, absent for the last mass).
    let features = move |i: usize, x: &[f64], t: f64, out: &mut [f64]| -> f64 {
        let left = if i == 0 { 0.0 } else { x[i - 1] };
        out[0] = -(x[i] - left - SPRING_REST);
        if i + 1 < p {
            out[1] = x[i + 1] - x[i] - SPRING_REST;
            GRAVITY
        } else {
            GRAVITY + 5.0 * t.sin()
        }
    };
    let terms: Vec<Vec<usize>> = (0..p)
        .map(|i| if i + 1 < p { vec![i, i + 1] } else { vec![i] })
        .collect();
    let drive_terms = terms.clone();
    let drive = move |x: &[f64], t: f64, beta: &[f64], out: &mut [f64]| {
        let mut g = [0.0; 2];
        for i in 0..p {
            let offset = features(i, x, t, &mut g);
            out[i] = offset
                + drive_terms[i]
                    .iter()
                    .enumerate()
                    .map(|(j, b)| g[j] * beta[*b])
                    .sum::<f64>();
        }
    };
    DynamicSystem {
        name: "spring_mass".into(),
        dim: p,
        order: 2,
        horizon,
        drive: Arc::new(drive),
        separable: Some(SeparableForm {
            terms,
            eval: Arc::new(features),
        }),
        params: ParamLayout {
            names: (1..=p).map(|i| format!("c_{i}")).collect(),
            truth: vec![3.0; p],
        },
        operator: zero_operator(p, 2),
        initial: (0..p).map(|i| vec![2.0 * (i + 1) as f64, 0.0]).collect(),
        breakpoints: vec![],
    }
}

fn pulse(t: f64) -> f64 {
    if (2.0..=3.0).contains(&t) {
        1.0
    } else {
        0.0
    }
}

fn oddm(p: usize, horizon: f64) -> DynamicSystem {
    // beta = (c_1..c_{p-1}, d_1..d_p); omega_i = (b_i, a_i).
    let d_offset = p - 1;
    let features = move |i: usize, x: &[f64], t: f64, out: &mut [f64]| -> f64 {
        if i + 1 < p {
            out[0] = x[i + 1];
            out[1] = pulse(t);
        } else {
            out[0] = pulse(t);
        }
        0.0
    };
    let terms: Vec<Vec<usize>> = (0..p)
        .map(|i| {
            if i + 1 < p {
                vec![i, d_offset + i]
            } else {
                vec![d_offset + i]
            }
        })
        .collect();
    let drive = move |x: &[f64], t: f64, beta: &[f64], out: &mut [f64]| {
        let u = pulse(t);
        for i in 0..p {
            let coupling = if i + 1 < p { beta[i] * x[i + 1] } else { 0.0 };
            out[i] = coupling + beta[d_offset + i] * u;
        }
    };
    let denom = (p.max(2) - 1) as f64;
    let mut names = Vec::new();
    let mut truth = Vec::new();
    for i in 1..p {
        names.push(format!("c_{i}"));
        truth.push(if i % 2 == 1 { 0.2 } else { -0.2 });
    }
    for i in 1..=p {
        names.push(format!("d_{i}"));
        truth.push(0.1);
    }
    let omega = (0..p)
        .map(|i| {
            let frac = i as f64 / denom;
            vec![0.9 + 0.2 * frac, 0.4 + 0.2 * frac]
        })
        .collect();
    DynamicSystem {
        name: "oddm".into(),
        dim: p,
        order: 2,
        horizon,
        drive: Arc::new(drive),
        separable: Some(SeparableForm {
            terms,
            eval: Arc::new(features),
        }),
        params: ParamLayout { names, truth },
        operator: OperatorCoeffs {
            omega,
            known: false,
            names: (1..=p)
                .map(|i| vec![format!("b_{i}"), format!("a_{i}")])
                .collect(),
        },
        initial: vec![vec![0.0, 0.0]; p],
        breakpoints: vec![2.0, 3.0],
    }
}

fn harmonic(horizon: f64) -> DynamicSystem {
    let q = HARMONIC_STEPS;
    let seg_len = horizon / q as f64;
    let segment = move |t: f64| -> usize { ((t / seg_len).floor().max(0.0) as usize).min(q - 1) };
    // beta = (c_X, a_X_1..a_X_Q, c_Z, a_Z_1..a_Z_Q)
    let features = move |i: usize, x: &[f64], t: f64, out: &mut [f64]| -> f64 {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[0] = x[i];
        out[1 + segment(t)] = 1.0;
        0.0
    };
    let drive = move |x: &[f64], t: f64, beta: &[f64], out: &mut [f64]| {
        let s = segment(t);
        for i in 0..2 {
            let base = i * (q + 1);
            out[i] = beta[base] * x[i] + beta[base + 1 + s];
        }
    };
    let mut names = vec!["c_X".to_string()];
    let mut truth = vec![-0.0015];
    for s in 0..q {
        names.push(format!("a_X_{}", s + 1));
        truth.push(-0.0005 + 0.001 * s as f64 / (q - 1) as f64);
    }
    names.push("c_Z".into());
    truth.push(-0.0015);
    for s in 0..q {
        names.push(format!("a_Z_{}", s + 1));
        truth.push(-0.002 + 0.003 * s as f64 / (q - 1) as f64);
    }
    DynamicSystem {
        name: "harmonic".into(),
        dim: 2,
        order: 2,
        horizon,
        drive: Arc::new(drive),
        separable: Some(SeparableForm {
            terms: (0..2)
                .map(|i| (0..=q).map(|j| i * (q + 1) + j).collect())
                .collect(),
            eval: Arc::new(features),
        }),
        params: ParamLayout { names, truth },
        operator: zero_operator(2, 2),
        initial: vec![vec![0.0, 0.0]; 2],
        breakpoints: (1..q).map(|s| s as f64 * seg_len).collect(),
    }
}

fn pendulum(horizon: f64) -> DynamicSystem {
    let features = |_i: usize, x: &[f64], _t: f64, out: &mut [f64]| -> f64 {
        out[0] = x[0].sin();
        0.0
    };
    let drive = |x: &[f64], _t: f64, beta: &[f64], out: &mut [f64]| {
        out[0] = beta[0] * x[0].sin();
    };
    DynamicSystem {
        name: "pendulum".into(),
        dim: 1,
        order: 2,
        horizon,
        drive: Arc::new(drive),
        separable: Some(SeparableForm {
            terms: vec![vec![0]],
            eval: Arc::new(features),
        }),
        params: ParamLayout {
            names: vec!["sin_coef".into()],
            truth: vec![-1.0],
        },
        operator: zero_operator(1, 2),
        initial: vec![vec![0.5, 0.0]],
        breakpoints: vec![],
    }
}
