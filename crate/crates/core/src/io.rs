//! CSV files for trajectories, observations and smoothed curves.
//!
//! Columns are `t, x1..xp`, followed for trajectories and smoothed curves by
//! `d{k}_x{i}` for each derivative order `k >= 1`. Values are written with 17
//! significant digits so that files round-trip exactly.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::smooth::SmoothedCurves;
use crate::systems::{SampledData, TrajectorySet};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

fn header(p: usize, max_k: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=p).map(|i| format!("x{i}")));
    for k in 1..=max_k {
        h.extend((1..=p).map(|i| format!("d{k}_x{i}")));
    }
    h
}

/// `columns[i][k][g]` of a value table written against `grid`.
fn write_table<W: Write>(
    w: W,
    grid: &[f64],
    columns: &[Vec<Vec<f64>>],
    max_k: usize,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let p = columns.len();
    out.write_record(header(p, max_k)).map_err(csv_err)?;
    let mut row = Vec::with_capacity(1 + p * (max_k + 1));
    for (g, t) in grid.iter().enumerate() {
        row.clear();
        row.push(fmt_f64(*t));
        for k in 0..=max_k {
            for col in columns {
                row.push(fmt_f64(col[k][g]));
            }
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trajectories<W: Write>(w: W, traj: &TrajectorySet) -> Result<()> {
    write_table(w, &traj.grid, &traj.values, traj.order())
}

pub fn write_smoothed<W: Write>(w: W, smoothed: &SmoothedCurves) -> Result<()> {
    write_table(w, &smoothed.grid, &smoothed.est, smoothed.max_order())
}

pub fn write_observations<W: Write>(w: W, data: &SampledData) -> Result<()> {
    let cols: Vec<Vec<Vec<f64>>> = data.obs.iter().map(|o| vec![o.clone()]).collect();
    write_table(w, &data.times, &cols, 0)
}

/// Observation times and values `obs[i][j]` from a `t, x1..xp` file.
pub fn read_observations<R: Read>(r: R) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rd = csv::Reader::from_reader(r);
    let head = rd.headers().map_err(csv_err)?.clone();
    if head.get(0).map(str::trim) != Some("t") {
        return Err(Error::Config(
            "observation file must start with a `t` column".into(),
        ));
    }
    let p = head
        .iter()
        .skip(1)
        .take_while(|h| h.trim().starts_with('x'))
        .count();
    if p == 0 {
        return Err(Error::Config("observation file has no `x` columns".into()));
    }
    let mut times = Vec::new();
    let mut obs = vec![Vec::new(); p];
    for rec in rd.records() {
        let rec = rec.map_err(csv_err)?;
        let parse = |c: usize| -> Result<f64> {
            let s = rec
                .get(c)
                .ok_or_else(|| Error::Config("short row in observation file".into()))?;
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad number `{s}`")))
        };
        times.push(parse(0)?);
        for (i, o) in obs.iter_mut().enumerate() {
            o.push(parse(i + 1)?);
        }
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Config("observation times must be sorted".into()));
    }
    Ok((times, obs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::Sampling;

    #[test]
    fn observations_round_trip() {
        let data = SampledData {
            times: vec![0.0, 0.1, 1.0 / 3.0],
            obs: vec![
                vec![1.0, -2.5e-9, std::f64::consts::PI],
                vec![0.0, 1e300, -0.1],
            ],
            noise_sigma: vec![0.0; 2],
            gamma: 0.0,
            seed: 0,
            sampling: Sampling::Equispaced,
            horizon: 1.0,
        };
        let mut buf = Vec::new();
        write_observations(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2\n"));
        let (t, o) = read_observations(buf.as_slice()).unwrap();
        assert_eq!(t, data.times);
        assert_eq!(o, data.obs);
    }

    #[test]
    fn trajectory_header() {
        let traj = TrajectorySet {
            grid: vec![0.0],
            values: vec![vec![vec![1.0], vec![2.0], vec![3.0]]; 2],
        };
        let mut buf = Vec::new();
        write_trajectories(&mut buf, &traj).unwrap();
        let first = String::from_utf8(buf)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(first, "t,x1,x2,d1_x1,d1_x2,d2_x1,d2_x2");
    }
}
