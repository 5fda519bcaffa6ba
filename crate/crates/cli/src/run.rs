//! Runs a manifest's Monte Carlo repetitions on a worker pool and writes
//! every artifact from a single collector.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use rbslam_core::evaluation::mc_aggregate;
use rbslam_core::gpmap::{predict_field, BasisDomain, MapKind};
use rbslam_core::io::{
    grid_2d, write_ancestor_profiles, write_box_stats, write_map_grid, write_results, write_trajectories, BoxRow,
    ResultRow, TrajectoryRecord,
};
use rbslam_core::simulation::{radio_line_model, radio_square_model, ScenarioConfig};
use rbslam_core::{GaussianMapBelief, Pose3D, PoseLike, PosePlanar};

use crate::experiments::{magnetic_rep, radio_line_rep, radio_square_rep, visual_rep, Method, Outcome, Settings};
use crate::manifest::ExperimentManifest;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    pub workers: usize,
    pub paper_scale: bool,
}

/// Summary of a finished experiment.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out: PathBuf,
    pub results: Vec<ResultRow>,
    pub box_stats: Vec<BoxRow>,
    pub seconds: f64,
}

impl RunSummary {
    /// Results of one method at one level, in run order.
    pub fn rmse(&self, level: f64, method: Method) -> Vec<f64> {
        let level = level_label(level);
        self.results
            .iter()
            .filter(|r| r.level == level && r.method == method.label())
            .map(|r| r.rmse)
            .collect()
    }

    pub fn median(&self, level: f64, method: Method) -> Option<f64> {
        let level = level_label(level);
        self.box_stats
            .iter()
            .find(|b| b.level == level && b.method == method.label())
            .map(|b| b.median)
    }
}

pub fn level_label(level: f64) -> String {
    format!("{level}")
}

/// Outcome of one (level, run) task.
pub enum TaskOutcome {
    Planar(Outcome<PosePlanar>),
    Spatial(Outcome<Pose3D>),
}

pub fn run_task(manifest: &ExperimentManifest, settings: &Settings, level: f64, rep: u64) -> anyhow::Result<TaskOutcome> {
    let seed = manifest.seed;
    let out = match &manifest.scenario {
        ScenarioConfig::RadioSquare(c) => TaskOutcome::Planar(radio_square_rep(c, settings, seed, rep)?),
        ScenarioConfig::RadioLine(c) => TaskOutcome::Planar(radio_line_rep(c, settings, seed, rep)?),
        ScenarioConfig::Magnetic3d(c) => TaskOutcome::Spatial(magnetic_rep(c, settings, seed, rep, level)?),
        ScenarioConfig::Visual2d(c) => TaskOutcome::Planar(visual_rep(c, settings, seed, rep, level)?),
    };
    Ok(out)
}

/// The manifest as actually executed: `--paper-scale` replaces the run
/// count.
pub fn resolve(manifest: &ExperimentManifest, paper_scale: bool) -> ExperimentManifest {
    let mut m = manifest.clone();
    if paper_scale {
        m.runs = m.paper_runs;
    }
    m
}

#[derive(Serialize)]
struct OutputIndex<'a> {
    seed: u64,
    config: &'a str,
    config_sha256: String,
    scenario: &'a str,
    files: Vec<String>,
}

/// Writes the artifact tree of `manifest` under `opts.out`.
pub fn run_experiment(manifest: &ExperimentManifest, opts: &RunOptions) -> anyhow::Result<RunSummary> {
    manifest.validate()?;
    let m = resolve(manifest, opts.paper_scale);
    let start = Instant::now();
    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    let mut log = Vec::new();

    let config = serde_json::to_string_pretty(&m)?;
    fs::write(opts.out.join("config.json"), &config)?;
    let mut files = vec!["config.json".to_string()];

    let settings = m.settings();
    let tasks: Vec<(usize, f64, u64)> = m
        .levels
        .iter()
        .enumerate()
        .flat_map(|(li, &level)| (0..m.runs as u64).map(move |rep| (li, level, rep)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .context("building the worker pool")?;
    log::info!("{} tasks on {} workers", tasks.len(), opts.workers);
    let outcomes: Vec<anyhow::Result<(TaskOutcome, f64)>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(_, level, rep)| {
                let t0 = Instant::now();
                let o = run_task(&m, &settings, level, rep).with_context(|| format!("level {level}, run {rep}"))?;
                Ok((o, t0.elapsed().as_secs_f64()))
            })
            .collect()
    });

    let mut collector = Collector::new(&m, &opts.out);
    for (&(_, level, rep), res) in tasks.iter().zip(outcomes) {
        let (outcome, secs) = res?;
        log.push(format!("level={level} run={rep} seconds={secs:.3}"));
        match outcome {
            TaskOutcome::Planar(o) => collector.add(o)?,
            TaskOutcome::Spatial(o) => collector.add(o)?,
        }
    }
    files.extend(collector.finish()?);

    let results = collector.results;
    write_results(File::create(opts.out.join("results.csv"))?, &results)?;
    files.push("results.csv".into());
    let box_stats = box_stats(&results)?;
    write_box_stats(File::create(opts.out.join("box_stats.csv"))?, &box_stats)?;
    files.push("box_stats.csv".into());

    let seconds = start.elapsed().as_secs_f64();
    log.push(format!("total seconds={seconds:.3} workers={}", opts.workers));
    fs::write(opts.out.join("run.log"), log.join("\n") + "\n")?;
    files.push("run.log".into());

    files.sort();
    let index = OutputIndex {
        seed: m.seed,
        config: "config.json",
        config_sha256: format!("{:x}", Sha256::digest(config.as_bytes())),
        scenario: m.scenario.name(),
        files,
    };
    fs::write(opts.out.join("outputs.json"), serde_json::to_string_pretty(&index)?)?;
    Ok(RunSummary {
        out: opts.out.clone(),
        results,
        box_stats,
        seconds,
    })
}

/// Box statistics per (scenario, level, method), in first-appearance order.
pub fn box_stats(results: &[ResultRow]) -> anyhow::Result<Vec<BoxRow>> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in results {
        let k = (r.scenario.clone(), r.level.clone(), r.method.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.iter()
        .map(|(s, l, me)| {
            let v: Vec<f64> = results
                .iter()
                .filter(|r| &r.scenario == s && &r.level == l && &r.method == me)
                .map(|r| r.rmse)
                .collect();
            Ok(BoxRow::new(s, l, me, &mc_aggregate(&v)?))
        })
        .collect()
}

/// Accumulates per-task outcomes and writes one file per (kind, level).
struct Collector<'a> {
    manifest: &'a ExperimentManifest,
    out: &'a Path,
    results: Vec<ResultRow>,
    trajectories: Vec<(String, Vec<u8>)>,
    ancestors: Vec<(String, Vec<(String, Vec<usize>)>)>,
    maps: Vec<String>,
    landmarks: Vec<(String, csv::Writer<Vec<u8>>)>,
}

impl<'a> Collector<'a> {
    fn new(manifest: &'a ExperimentManifest, out: &'a Path) -> Self {
        Collector {
            manifest,
            out,
            results: Vec::new(),
            trajectories: Vec::new(),
            ancestors: Vec::new(),
            maps: Vec::new(),
            landmarks: Vec::new(),
        }
    }

    fn buffer(&mut self, name: String) -> &mut Vec<u8> {
        let i = match self.trajectories.iter().position(|(n, _)| *n == name) {
            Some(i) => i,
            None => {
                self.trajectories.push((name, Vec::new()));
                self.trajectories.len() - 1
            }
        };
        &mut self.trajectories[i].1
    }

    fn add<P: PoseLike>(&mut self, o: Outcome<P>) -> anyhow::Result<()> {
        let scenario = self.manifest.scenario.name();
        let level = level_label(o.level);
        let run_id = o.rep.to_string();
        for (m, r) in &o.scores {
            self.results.push(ResultRow {
                scenario: scenario.into(),
                level: level.clone(),
                method: m.label().into(),
                run_id: run_id.clone(),
                rmse: *r,
            });
        }

        let truth = [TrajectoryRecord {
            run_id: &run_id,
            sample_k: -1,
            poses: &o.truth,
            weights: None,
        }];
        append_trajectories(self.buffer(format!("traj_truth_level{level}.csv")), &truth)?;
        for e in &o.estimates {
            let rec = [TrajectoryRecord {
                run_id: &run_id,
                sample_k: e.sample_k,
                poses: &e.poses,
                weights: e.weights.as_deref(),
            }];
            append_trajectories(self.buffer(format!("traj_{}_level{level}.csv", e.method.label())), &rec)?;
        }

        if let Some(profile) = o.ancestor_profile {
            let name = format!("ancestors_level{level}.csv");
            match self.ancestors.iter_mut().find(|(n, _)| *n == name) {
                Some((_, v)) => v.push((run_id.clone(), profile)),
                None => self.ancestors.push((name, vec![(run_id.clone(), profile)])),
            }
        }

        match &self.manifest.scenario {
            ScenarioConfig::RadioSquare(_) | ScenarioConfig::RadioLine(_) if (o.rep as usize) < self.manifest.map_runs => {
                let domain = self.radio_domain()?;
                let n = o.true_map.len();
                let truth = GaussianMapBelief {
                    mean: o.true_map.clone(),
                    cov: nalgebra::DMatrix::zeros(n, n),
                };
                self.write_map(&domain, "truth", &level, &run_id, &truth)?;
                for s in &o.maps {
                    self.write_map(&domain, s.method.label(), &level, &run_id, &s.belief)?;
                }
            }
            ScenarioConfig::Visual2d(_) => {
                let name = format!("landmarks_level{level}.csv");
                let i = match self.landmarks.iter().position(|(n, _)| *n == name) {
                    Some(i) => i,
                    None => {
                        let mut w = csv::Writer::from_writer(Vec::new());
                        w.write_record(["run_id", "method", "landmark", "x", "y"])?;
                        self.landmarks.push((name, w));
                        self.landmarks.len() - 1
                    }
                };
                let w = &mut self.landmarks[i].1;
                let rows = std::iter::once(("truth", &o.true_map)).chain(o.maps.iter().map(|s| (s.method.label(), &s.belief.mean)));
                for (label, lm) in rows {
                    for j in 0..lm.len() / 2 {
                        w.write_record([
                            run_id.clone(),
                            label.to_string(),
                            j.to_string(),
                            lm[2 * j].to_string(),
                            lm[2 * j + 1].to_string(),
                        ])?;
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn radio_domain(&self) -> anyhow::Result<BasisDomain> {
        Ok(match &self.manifest.scenario {
            ScenarioConfig::RadioSquare(c) => radio_square_model(c)?.domain,
            ScenarioConfig::RadioLine(c) => radio_line_model(c)?.domain,
            _ => unreachable!("radio scenarios only"),
        })
    }

    fn write_map(&mut self, domain: &BasisDomain, label: &str, level: &str, run_id: &str, belief: &GaussianMapBelief) -> anyhow::Result<()> {
        let lo = domain.lower();
        let hi = domain.upper();
        let query = grid_2d([lo[0], lo[1]], [hi[0], hi[1]], self.manifest.grid);
        let field = predict_field(belief, domain, &query, MapKind::Radio);
        let name = format!("map_{label}_level{level}_run{run_id}.csv");
        write_map_grid(BufWriter::new(File::create(self.out.join(&name))?), &query, &field)?;
        self.maps.push(name);
        Ok(())
    }

    fn finish(&mut self) -> anyhow::Result<Vec<String>> {
        let mut files = Vec::new();
        for (name, body) in &self.trajectories {
            fs::write(self.out.join(name), body)?;
            files.push(name.clone());
        }
        for (name, profiles) in &self.ancestors {
            let refs: Vec<(&str, Vec<usize>)> = profiles.iter().map(|(r, p)| (r.as_str(), p.clone())).collect();
            write_ancestor_profiles(BufWriter::new(File::create(self.out.join(name))?), &refs)?;
            files.push(name.clone());
        }
        for (name, w) in self.landmarks.drain(..) {
            fs::write(self.out.join(&name), w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?;
            files.push(name);
        }
        files.extend(self.maps.iter().cloned());
        Ok(files)
    }
}

/// Appends records to a trajectory CSV buffer, writing the header only for
/// the first batch.
fn append_trajectories<P: PoseLike>(buf: &mut Vec<u8>, records: &[TrajectoryRecord<P>]) -> anyhow::Result<()> {
    let mut chunk = Vec::new();
    write_trajectories(&mut chunk, records)?;
    let body = if buf.is_empty() {
        &chunk[..]
    } else {
        let header_end = chunk.iter().position(|&b| b == b'\n').map_or(chunk.len(), |i| i + 1);
        &chunk[header_end..]
    };
    buf.write_all(body)?;
    Ok(())
}

/// Worker count: explicit request, then the manifest, then the machine.
pub fn resolve_workers(requested: Option<usize>, manifest: &ExperimentManifest) -> usize {
    requested
        .or(manifest.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}
