//! CSV writers for trajectories, map grids and Monte Carlo results.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::evaluation::BoxStats;
use crate::geometry::PoseLike;
use crate::gpmap::FieldPrediction;
use crate::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidArgument(format!("io: {e}"))
}

/// A trajectory to be written, tagged with the run and sample it belongs to.
pub struct TrajectoryRecord<'a, P> {
    pub run_id: &'a str,
    pub sample_k: i64,
    pub poses: &'a [P],
    /// Per-step weights; `None` writes 1.
    pub weights: Option<&'a [f64]>,
}

pub fn trajectory_header<P: PoseLike>() -> Vec<&'static str> {
    let mut h = vec!["run_id", "sample_k", "t", "x", "y"];
    if P::POS_DIM == 3 {
        h.push("z");
        h.extend(["qw", "qx", "qy", "qz"]);
    } else {
        h.push("heading");
    }
    h.push("weight");
    h
}

/// Columns `run_id, sample_k, t, x, y[, z], heading | qw qx qy qz, weight`.
pub fn write_trajectories<P: PoseLike, W: Write>(out: W, records: &[TrajectoryRecord<P>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(trajectory_header::<P>()).map_err(csv_err)?;
    for rec in records {
        for (t, p) in rec.poses.iter().enumerate() {
            let mut row = vec![rec.run_id.to_string(), rec.sample_k.to_string(), t.to_string()];
            row.extend(p.position_slice().iter().map(|v| v.to_string()));
            row.extend(p.orientation_fields().iter().map(|v| v.to_string()));
            row.push(rec.weights.map_or(1.0, |ws| ws[t]).to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err)
}

/// Columns `x, y[, z], mean_k…, var_k…` for each output channel `k`.
pub fn write_map_grid<W: Write>(out: W, query: &[Vec<f64>], field: &FieldPrediction) -> Result<()> {
    let d = query.first().map_or(0, |q| q.len());
    let k = field.mean.ncols();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["x", "y", "z"][..d].iter().map(|s| s.to_string()).collect();
    header.extend((0..k).map(|i| format!("mean_{i}")));
    header.extend((0..k).map(|i| format!("var_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (i, q) in query.iter().enumerate() {
        let mut row: Vec<String> = q.iter().map(|v| v.to_string()).collect();
        row.extend((0..k).map(|c| field.mean[(i, c)].to_string()));
        row.extend((0..k).map(|c| field.variance[(i, c)].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

/// Regular grid over a box, row-major in the first coordinate.
pub fn grid_2d(lower: [f64; 2], upper: [f64; 2], n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let f = |k: usize, a: f64, b: f64| a + (b - a) * k as f64 / (n - 1).max(1) as f64;
            out.push(vec![f(j, lower[0], upper[0]), f(i, lower[1], upper[1])]);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub level: String,
    pub method: String,
    pub run_id: String,
    pub rmse: f64,
}

pub fn write_results<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_results<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRow {
    pub scenario: String,
    pub level: String,
    pub method: String,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub mean: f64,
    pub outliers: usize,
}

impl BoxRow {
    pub fn new(scenario: &str, level: &str, method: &str, s: &BoxStats) -> Self {
        BoxRow {
            scenario: scenario.into(),
            level: level.into(),
            method: method.into(),
            n: s.n,
            median: s.median,
            q1: s.q1,
            q3: s.q3,
            whisker_low: s.whisker_low,
            whisker_high: s.whisker_high,
            mean: s.mean,
            outliers: s.outliers.len(),
        }
    }
}

pub fn write_box_stats<W: Write>(out: W, rows: &[BoxRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

/// Columns `run_id, t, unique_ancestors`.
pub fn write_ancestor_profiles<W: Write>(out: W, profiles: &[(&str, Vec<usize>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["run_id", "t", "unique_ancestors"]).map_err(csv_err)?;
    for (run_id, prof) in profiles {
        for (t, c) in prof.iter().enumerate() {
            w.write_record([run_id.to_string(), t.to_string(), c.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err)
}
