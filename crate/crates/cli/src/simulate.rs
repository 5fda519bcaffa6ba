//! Export of one simulated run: ground truth, odometry, measurements and a
//! JSON sidecar.

use std::fs::{self, File};
use std::path::Path;

use anyhow::Context;
use nalgebra::DVector;
use serde::Serialize;

use rbslam_core::io::{write_trajectories, TrajectoryRecord};
use rbslam_core::simulation::{gen_magnetic, gen_radio_line, gen_radio_square, gen_visual2d, MagneticConfig, ScenarioConfig, VisualConfig};
use rbslam_core::{PlanarStep, PoseLike, SpatialStep};

use crate::manifest::ExperimentManifest;

#[derive(Serialize)]
struct Sidecar<'a> {
    seed: u64,
    run: u64,
    level: f64,
    scenario: &'a ScenarioConfig,
    steps: usize,
    map_dim: usize,
    files: [&'static str; 4],
}

trait OdometryRow {
    fn header() -> Vec<&'static str>;
    fn fields(&self) -> Vec<f64>;
}

impl OdometryRow for PlanarStep {
    fn header() -> Vec<&'static str> {
        vec!["dx", "dy", "dheading"]
    }
    fn fields(&self) -> Vec<f64> {
        vec![self.odometry.dp.x, self.odometry.dp.y, self.odometry.dheading]
    }
}

impl OdometryRow for SpatialStep {
    fn header() -> Vec<&'static str> {
        vec!["dx", "dy", "dz", "qw", "qx", "qy", "qz"]
    }
    fn fields(&self) -> Vec<f64> {
        let q = self.odometry.dq;
        let p = self.odometry.dp;
        vec![p.x, p.y, p.z, q.w, q.i, q.j, q.k]
    }
}

fn write_run<P: PoseLike, U: OdometryRow>(
    dir: &Path,
    truth: &[P],
    inputs: &[U],
    measurements: &[Vec<f64>],
    theta: &DVector<f64>,
) -> anyhow::Result<()> {
    write_trajectories(
        File::create(dir.join("truth.csv"))?,
        &[TrajectoryRecord {
            run_id: "0",
            sample_k: -1,
            poses: truth,
            weights: None,
        }],
    )?;

    let mut w = csv::Writer::from_path(dir.join("odometry.csv"))?;
    let mut header = vec!["t"];
    header.extend(U::header());
    w.write_record(&header)?;
    for (t, u) in inputs.iter().enumerate() {
        // the increment from step t to t + 1
        let mut row = vec![t.to_string()];
        row.extend(u.fields().iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("measurements.csv"))?;
    let width = measurements.first().map_or(0, |y| y.len());
    let mut header = vec!["t".to_string()];
    header.extend((0..width).map(|k| format!("y_{k}")));
    w.write_record(&header)?;
    for (t, y) in measurements.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(y.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("theta.csv"))?;
    w.write_record(["index", "value"])?;
    for (i, v) in theta.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn dense(ys: &[DVector<f64>]) -> Vec<Vec<f64>> {
    ys.iter().map(|y| y.iter().cloned().collect()).collect()
}

/// Simulates run `rep` at `level` of the manifest's scenario into `dir`.
pub fn simulate_to_dir(manifest: &ExperimentManifest, rep: u64, level: f64, dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let seed = manifest.seed;
    let (steps, map_dim) = match &manifest.scenario {
        ScenarioConfig::RadioSquare(c) => {
            let r = gen_radio_square(c, seed, rep)?;
            write_run(dir, &r.truth, &r.inputs, &dense(&r.measurements), &r.theta)?;
            (r.truth.len(), r.theta.len())
        }
        ScenarioConfig::RadioLine(c) => {
            let r = gen_radio_line(c, seed, rep)?;
            write_run(dir, &r.truth, &r.inputs, &dense(&r.measurements), &r.theta)?;
            (r.truth.len(), r.theta.len())
        }
        ScenarioConfig::Magnetic3d(c) => {
            let c = MagneticConfig { bias: level, ..c.clone() };
            let r = gen_magnetic(&c, seed, rep)?;
            write_run(dir, &r.truth, &r.inputs, &dense(&r.measurements), &r.theta)?;
            (r.truth.len(), r.theta.len())
        }
        ScenarioConfig::Visual2d(c) => {
            let c = VisualConfig {
                init_noise_var: level,
                ..c.clone()
            };
            let s = gen_visual2d(&c, seed, rep)?;
            let ys: Vec<Vec<f64>> = s
                .run
                .measurements
                .iter()
                .map(|y| y.iter().map(|v| v.unwrap_or(f64::NAN)).collect())
                .collect();
            write_run(dir, &s.run.truth, &s.run.inputs, &ys, &s.run.theta)?;
            (s.run.truth.len(), s.run.theta.len())
        }
    };
    let sidecar = Sidecar {
        seed,
        run: rep,
        level,
        scenario: &manifest.scenario,
        steps,
        map_dim,
        files: ["truth.csv", "odometry.csv", "measurements.csv", "theta.csv"],
    };
    fs::write(dir.join("simulate.json"), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}
