mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use greens_match::experiment::ExperimentConfig;
use greens_match::matching::Method;
use greens_match::smooth::BandwidthRule;
use greens_match::systems::{BuiltinSystem, Sampling};

#[derive(Parser)]
#[command(
    name = "greensmatch",
    version,
    about = "ODE parameter estimation by Green's matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and noisy observations.
    Simulate(Shared),
    /// Estimate parameters, standard errors and confidence intervals.
    Estimate(EstimateArgs),
    /// Monte Carlo accuracy of each method.
    Bench(Shared),
    /// Sparse equation discovery on the pendulum.
    Discover(Shared),
}

#[derive(Args, Clone, Default)]
struct Shared {
    /// gene_network, spring_mass, oddm, harmonic or pendulum.
    #[arg(long)]
    system: Option<BuiltinSystem>,
    #[arg(long)]
    n: Option<usize>,
    /// Noise level relative to the root mean square of each trajectory.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    /// Seed of replication 0; replication r uses seed + r.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of greens, grad_k, grad_km1.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (1 runs serially).
    #[arg(long)]
    threads: Option<usize>,
    /// equispaced or uniform.
    #[arg(long)]
    sampling: Option<Sampling>,
    /// cv or fixed:<h>.
    #[arg(long)]
    bandwidth: Option<BandwidthRule>,
    /// Number of estimation grid points.
    #[arg(long = "grid-H")]
    grid_h: Option<usize>,
    /// Fraction of the horizon given zero weight at each end.
    #[arg(long)]
    trim: Option<f64>,
    /// System override such as `p=5` or `c_1=2.5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<(String, f64)>,
}

#[derive(Args, Clone)]
struct EstimateArgs {
    #[command(flatten)]
    shared: Shared,
    /// Directory written by `simulate`; data are simulated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Also write forward-solved trajectories from each estimate.
    #[arg(long)]
    reconstruct: bool,
}

fn parse_override(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("bad value in `{s}`"))?;
    Ok((k.trim().to_string(), v))
}

pub enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<greens_match::Error> for Failure {
    fn from(e: greens_match::Error) -> Self {
        use greens_match::Error as E;
        match e {
            E::RankDeficient { .. }
            | E::Singular { .. }
            | E::Divergence { .. }
            | E::LassoNonConvergence { .. } => Failure::Numerical(e.to_string()),
            other => Failure::Usage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl Shared {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
                Ok(ExperimentConfig::from_toml(&text)?)
            }
            None => Ok(ExperimentConfig::default()),
        }
    }

    /// Applies the flags to the estimation settings.
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.system {
            cfg.system = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.reps {
            cfg.reps = v;
        }
        if let Some(v) = self.seed {
            cfg.seed0 = v;
        }
        if let Some(v) = &self.methods {
            cfg.methods = v.clone();
        }
        if let Some(v) = self.sampling {
            cfg.sampling = v;
        }
        if let Some(v) = &self.bandwidth {
            cfg.smoothing.bandwidth = v.clone();
        }
        if let Some(v) = self.grid_h {
            cfg.smoothing.grid_points = v;
        }
        if let Some(v) = self.trim {
            cfg.matching.trim = v;
        }
        self.apply_common(cfg);
    }

    /// Applies the sampling and smoothing flags to the discovery study.
    fn apply_discovery(&self, cfg: &mut ExperimentConfig) {
        let d = &mut cfg.discovery;
        if let Some(v) = self.n {
            d.n = v;
        }
        if let Some(v) = self.gamma {
            d.gamma = v;
        }
        if let Some(v) = self.reps {
            d.reps = v;
        }
        if let Some(v) = self.seed {
            d.seed0 = v;
        }
        if let Some(v) = self.sampling {
            d.sampling = v;
        }
        if let Some(v) = &self.bandwidth {
            d.smoothing.bandwidth = v.clone();
        }
        if let Some(v) = self.grid_h {
            d.smoothing.grid_points = v;
        }
        if let Some(v) = self.trim {
            d.matching.trim = v;
        }
        self.apply_common(cfg);
    }

    fn apply_common(&self, cfg: &mut ExperimentConfig) {
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.threads {
            cfg.threads = Some(v);
        }
        for (k, v) in &self.overrides {
            cfg.overrides.insert(k.clone(), *v);
        }
    }
}

fn configure(shared: &Shared, discovery: bool) -> Result<ExperimentConfig, Failure> {
    let mut cfg = shared.load()?;
    if discovery {
        shared.apply_discovery(&mut cfg);
    } else {
        shared.apply(&mut cfg);
    }
    cfg.validate()?;
    if let Some(t) = cfg.threads {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    std::fs::create_dir_all(&cfg.out)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Simulate(s) => commands::simulate(&configure(&s, false)?),
        Command::Estimate(a) => commands::estimate(
            &configure(&a.shared, false)?,
            a.data.as_deref(),
            a.reconstruct,
        ),
        Command::Bench(s) => commands::bench(&configure(&s, false)?),
        Command::Discover(s) => commands::discover(&configure(&s, true)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
