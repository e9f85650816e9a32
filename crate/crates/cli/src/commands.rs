use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use greens_match::discover::{discovery_benchmark, DISCOVERY_METHODS};
use greens_match::experiment::{run_experiment, ExperimentConfig, ExperimentRun, RepRecord};
use greens_match::infer::{
    asymptotic_covariance, confidence_intervals, reconstruct_trajectories, CovarianceMode,
};
use greens_match::io::{fmt_f64, read_observations, write_observations, write_trajectories};
use greens_match::matching::{MatchConfig, Method};
use greens_match::pipeline::{
    estimate_on_data, estimation_grid, reference_trajectory, Replication,
};
use greens_match::systems::{simulate_observations, DynamicSystem, SampledData};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::Failure;

const MANIFEST: &str = "manifest.toml";

#[derive(Debug, Serialize, Deserialize)]
struct ObservationFile {
    rep: usize,
    seed: u64,
    file: String,
    noise_sigma: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    trajectory: String,
    observations: Vec<ObservationFile>,
    config: ExperimentConfig,
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>, Failure> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(
        dir.join(name),
    )?)))
}

fn obs_name(rep: usize) -> String {
    format!("obs_rep{rep:03}.csv")
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let system = cfg.build_system()?;
    let traj = reference_trajectory(&system)?;
    write_trajectories(
        BufWriter::new(File::create(cfg.out.join("trajectory.csv"))?),
        &traj,
    )?;
    let data: Vec<SampledData> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = cfg.seed0.wrapping_add(rep as u64);
            simulate_observations(&traj, &system, cfg.n, cfg.gamma, cfg.sampling, seed)
        })
        .collect::<greens_match::Result<_>>()?;
    let mut observations = Vec::with_capacity(data.len());
    for (rep, d) in data.iter().enumerate() {
        let file = obs_name(rep);
        write_observations(BufWriter::new(File::create(cfg.out.join(&file))?), d)?;
        observations.push(ObservationFile {
            rep,
            seed: d.seed,
            file,
            noise_sigma: d.noise_sigma.clone(),
        });
    }
    let manifest = Manifest {
        trajectory: "trajectory.csv".into(),
        observations,
        config: cfg.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Failure::Usage(e.to_string()))?;
    std::fs::write(cfg.out.join(MANIFEST), text)?;
    println!(
        "wrote {} observation files and {MANIFEST} to {}",
        cfg.reps,
        cfg.out.display()
    );
    Ok(())
}

fn load_dataset(dir: &Path, system: &DynamicSystem) -> Result<Vec<(usize, SampledData)>, Failure> {
    let text = std::fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Failure::Usage(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{MANIFEST}: {e}")))?;
    let mut out = Vec::new();
    for entry in &manifest.observations {
        let (times, obs) = read_observations(File::open(dir.join(&entry.file))?)?;
        let data = SampledData {
            times,
            obs,
            noise_sigma: entry.noise_sigma.clone(),
            gamma: manifest.config.gamma,
            seed: entry.seed,
            sampling: manifest.config.sampling,
            horizon: system.horizon,
        };
        out.push((entry.rep, data));
    }
    if out.is_empty() {
        return Err(Failure::Usage("manifest lists no observation files".into()));
    }
    Ok(out)
}

fn covariance_mode(method: Method) -> CovarianceMode {
    match method {
        Method::Greens => CovarianceMode::Asymptotic,
        _ => CovarianceMode::SmootherWeights,
    }
}

struct EstimateRow {
    param: String,
    truth: f64,
    estimate: f64,
    se: f64,
    lo: f64,
    hi: f64,
    converged: bool,
}

fn estimate_rows(
    rep: &Replication,
    method: Method,
    system: &DynamicSystem,
    matching: &MatchConfig,
    level: f64,
) -> Vec<EstimateRow> {
    let names = system.estimand_names();
    let truth = system.estimand_truth();
    let failed = || {
        names
            .iter()
            .zip(&truth)
            .map(|(n, t)| EstimateRow {
                param: n.clone(),
                truth: *t,
                estimate: f64::NAN,
                se: f64::NAN,
                lo: f64::NAN,
                hi: f64::NAN,
                converged: false,
            })
            .collect()
    };
    let Some(outcome) = rep.outcomes.iter().find(|o| o.method == method) else {
        return failed();
    };
    let Ok(report) = &outcome.report else {
        return failed();
    };
    let curves = rep.smoothed.for_method(method);
    let est = report.estimates();
    let cov = asymptotic_covariance(
        report,
        curves,
        &rep.data,
        system,
        matching,
        covariance_mode(method),
    )
    .ok();
    let ci = cov
        .as_ref()
        .and_then(|c| confidence_intervals(report, c, level).ok());
    (0..names.len())
        .map(|j| EstimateRow {
            param: names[j].clone(),
            truth: truth[j],
            estimate: est[j],
            se: cov.as_ref().map_or(f64::NAN, |c| c.se[j]),
            lo: ci.as_ref().map_or(f64::NAN, |c| c[j].lo),
            hi: ci.as_ref().map_or(f64::NAN, |c| c[j].hi),
            converged: report.converged,
        })
        .collect()
}

pub fn estimate(
    cfg: &ExperimentConfig,
    data_dir: Option<&Path>,
    reconstruct: bool,
) -> Result<(), Failure> {
    let system = cfg.build_system()?;
    let records: Vec<RepRecord> = match data_dir {
        Some(dir) => load_dataset(dir, &system)?
            .into_par_iter()
            .map(|(rep, data)| RepRecord {
                rep,
                seed: data.seed,
                replication: estimate_on_data(
                    &system,
                    data,
                    &cfg.methods,
                    &cfg.smoothing,
                    &cfg.matching,
                )
                .map_err(|e| e.to_string()),
            })
            .collect(),
        None => run_experiment(cfg)?.records,
    };
    let rows: Vec<Vec<(Method, Vec<EstimateRow>)>> = records
        .par_iter()
        .map(|r| {
            cfg.methods
                .iter()
                .map(|m| match &r.replication {
                    Ok(rep) => (
                        *m,
                        estimate_rows(rep, *m, &system, &cfg.matching, cfg.confidence_level),
                    ),
                    Err(_) => (*m, Vec::new()),
                })
                .collect()
        })
        .collect();
    let mut w = writer(&cfg.out, "estimates.csv")?;
    w.write_record([
        "rep",
        "method",
        "param",
        "true",
        "estimate",
        "se",
        "ci_lo",
        "ci_hi",
        "converged",
    ])?;
    let names = system.estimand_names();
    let truth = system.estimand_truth();
    for (r, per_method) in records.iter().zip(&rows) {
        for (m, rows) in per_method {
            if rows.is_empty() {
                for (n, t) in names.iter().zip(&truth) {
                    let nan = fmt_f64(f64::NAN);
                    w.write_record([
                        &r.rep.to_string(),
                        m.as_str(),
                        n,
                        &fmt_f64(*t),
                        &nan,
                        &nan,
                        &nan,
                        &nan,
                        "false",
                    ])?;
                }
                continue;
            }
            for row in rows {
                w.write_record([
                    r.rep.to_string(),
                    m.to_string(),
                    row.param.clone(),
                    fmt_f64(row.truth),
                    fmt_f64(row.estimate),
                    fmt_f64(row.se),
                    fmt_f64(row.lo),
                    fmt_f64(row.hi),
                    row.converged.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    let failures: Vec<String> = records
        .iter()
        .flat_map(|r| {
            cfg.methods.iter().filter_map(move |m| {
                r.estimates(*m)
                    .err()
                    .map(|e| format!("rep {} {m}: {e}", r.rep))
            })
        })
        .collect();
    for f in &failures {
        eprintln!("warning: {f}");
    }
    if reconstruct {
        write_reconstructions(cfg, &system, &records)?;
    }
    println!(
        "wrote estimates for {} replications to {}",
        records.len(),
        cfg.out.join("estimates.csv").display()
    );
    Ok(())
}

fn write_reconstructions(
    cfg: &ExperimentConfig,
    system: &DynamicSystem,
    records: &[RepRecord],
) -> Result<(), Failure> {
    let grid = estimation_grid(system, cfg.smoothing.grid_points);
    for r in records {
        let Ok(rep) = &r.replication else { continue };
        let Some(curves) = rep
            .smoothed
            .derivatives
            .as_ref()
            .filter(|c| c.max_order() + 1 >= system.order)
        else {
            eprintln!(
                "warning: rep {}: reconstruction needs a gradient method for initial derivatives",
                r.rep
            );
            continue;
        };
        for o in &rep.outcomes {
            let Ok(report) = &o.report else { continue };
            match reconstruct_trajectories(report, curves, system, &grid) {
                Ok(traj) => {
                    let name = format!("reconstruction_rep{:03}_{}.csv", r.rep, o.method);
                    write_trajectories(BufWriter::new(File::create(cfg.out.join(name))?), &traj)?;
                }
                Err(e) => eprintln!(
                    "warning: rep {} {}: reconstruction failed: {e}",
                    r.rep, o.method
                ),
            }
        }
    }
    Ok(())
}

fn write_metrics(cfg: &ExperimentConfig, run: &ExperimentRun) -> Result<(), Failure> {
    let mut w = writer(&cfg.out, "metrics.csv")?;
    w.write_record([
        "system",
        "method",
        "n",
        "gamma",
        "rrmse_pct",
        "rbias_pct",
        "rsd_pct",
        "reps",
        "seed0",
    ])?;
    let mut rt = writer(&cfg.out, "runtime.csv")?;
    rt.write_record(["system", "method", "mean_runtime_s", "used", "failed"])?;
    println!(
        "{:<10} {:>10} {:>10} {:>10} {:>6} {:>10}",
        "method", "rrmse%", "rbias%", "rsd%", "failed", "seconds"
    );
    for m in &run.methods {
        let mm = run.metrics(*m)?;
        let fmt = |f: fn(&greens_match::infer::MetricsRow) -> f64| {
            mm.metrics.as_ref().map_or(f64::NAN, f)
        };
        let (rrmse, rbias, rsd) = (fmt(|r| r.rrmse), fmt(|r| r.rbias), fmt(|r| r.rsd));
        w.write_record([
            cfg.system.to_string(),
            m.to_string(),
            cfg.n.to_string(),
            cfg.gamma.to_string(),
            format!("{rrmse:.6}"),
            format!("{rbias:.6}"),
            format!("{rsd:.6}"),
            cfg.reps.to_string(),
            cfg.seed0.to_string(),
        ])?;
        rt.write_record([
            cfg.system.to_string(),
            m.to_string(),
            format!("{:.6}", mm.mean_seconds),
            mm.used.to_string(),
            mm.failed.to_string(),
        ])?;
        println!(
            "{:<10} {rrmse:>10.3} {rbias:>10.3} {rsd:>10.3} {:>6} {:>10.4}",
            m.as_str(),
            mm.failed,
            mm.mean_seconds
        );
    }
    w.flush()?;
    rt.flush()?;
    Ok(())
}

pub fn bench(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let run = run_experiment(cfg)?;
    write_metrics(cfg, &run)?;
    for r in &run.records {
        if let Err(e) = &r.replication {
            eprintln!("warning: rep {} failed: {e}", r.rep);
        }
    }
    println!("{} replications in {:.2} s", cfg.reps, run.seconds);
    Ok(())
}

pub fn discover(cfg: &ExperimentConfig) -> Result<(), Failure> {
    let d = &cfg.discovery;
    let bench = discovery_benchmark(d)?;
    let mut w = writer(&cfg.out, "discovery.csv")?;
    w.write_record(["rep", "method", "feature", "coefficient", "selected_lambda"])?;
    for rep in &bench.reps {
        for res in &rep.results {
            for (name, c) in res.names.iter().zip(&res.selected_beta) {
                w.write_record([
                    rep.rep.to_string(),
                    res.method.to_string(),
                    name.clone(),
                    fmt_f64(*c),
                    fmt_f64(res.selected_lambda),
                ])?;
            }
        }
    }
    w.flush()?;

    let mut f = writer(&cfg.out, "field.csv")?;
    f.write_record(["x", "dx", "u_true", "v_true", "u_hat", "v_hat", "method"])?;
    for s in &bench.summaries {
        for ((state, t), h) in bench
            .true_field
            .states
            .iter()
            .zip(&bench.true_field.arrows)
            .zip(&s.average_field.arrows)
        {
            f.write_record([
                fmt_f64(state[0]),
                fmt_f64(state[1]),
                fmt_f64(t[0]),
                fmt_f64(t[1]),
                fmt_f64(h[0]),
                fmt_f64(h[1]),
                s.method.to_string(),
            ])?;
        }
    }
    f.flush()?;

    let mut s = writer(&cfg.out, "discovery_summary.csv")?;
    s.write_record([
        "method",
        "reps",
        "recovery_rate",
        "mean_field_error",
        "average_field_error",
    ])?;
    println!(
        "{:<8} {:>9} {:>16} {:>19}",
        "method", "recovered", "mean field error", "averaged field error"
    );
    for m in &bench.summaries {
        s.write_record([
            m.method.to_string(),
            d.reps.to_string(),
            format!("{:.6}", m.recovery_rate),
            format!("{:.6}", m.mean_field_error),
            format!("{:.6}", m.average_field_error),
        ])?;
        println!(
            "{:<8} {:>8.0}% {:>16.4} {:>19.4}",
            m.method.as_str(),
            100.0 * m.recovery_rate,
            m.mean_field_error,
            m.average_field_error
        );
    }
    s.flush()?;
    debug_assert_eq!(bench.summaries.len(), DISCOVERY_METHODS.len());
    Ok(())
}
