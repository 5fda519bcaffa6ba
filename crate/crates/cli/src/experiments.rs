//! One Monte Carlo repetition of each scenario: simulate, run the requested
//! estimators and score them.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use rbslam_core::baselines::{ekf_slam_run, eks_smooth};
use rbslam_core::evaluation::{landmark_aligned_rmse, pose_rmse, positions, unique_ancestor_profile};
use rbslam_core::inference::{localize_known_map, mcmc_smoother_run, rbpf_as_run, FilterOptions, FutureMethod, SlamProblem};
use rbslam_core::rng::{derive_seed, substream, Stream};
use rbslam_core::simulation::{
    gen_magnetic, gen_radio_line, gen_radio_square, gen_visual2d, radio_line_model, radio_square_model, MagneticConfig,
    PlanarRun, RadioLineConfig, RadioSquareConfig, VisualConfig,
};
use rbslam_core::{
    GaussianMapBelief, MeasurementModel, OdometryFrame, PlanarMotion, PlanarStep, RadioModel, PoseLike, PosePlanar, SpatialMotion,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "PF")]
    Pf,
    #[serde(rename = "PS")]
    Ps,
    #[serde(rename = "EKF")]
    Ekf,
    #[serde(rename = "EKS")]
    Eks,
    #[serde(rename = "localize")]
    Localize,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Pf => "PF",
            Method::Ps => "PS",
            Method::Ekf => "EKF",
            Method::Eks => "EKS",
            Method::Localize => "localize",
        }
    }
}

/// Estimator settings shared by all repetitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub particles: usize,
    pub iterations: usize,
    pub prune_nats: f64,
    pub future: FutureMethod,
    pub methods: Vec<Method>,
    /// Standard deviation of the navigation-frame position noise the
    /// localization filter adds to every odometry step.
    pub localize_jitter: f64,
}

impl Settings {
    fn filter_options(&self) -> FilterOptions {
        FilterOptions {
            particles: self.particles,
            future: self.future,
            prune_nats: self.prune_nats,
        }
    }

    fn wants(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}

/// Seed of the estimators in repetition `rep`, independent of scheduling.
pub fn rep_seed(seed: u64, rep: u64) -> u64 {
    derive_seed(seed, &[Stream::Repetition as u64, rep])
}

/// An estimated trajectory of one method; `sample_k` is `−1` for point
/// estimates and the iteration index for smoother samples.
#[derive(Clone, Debug)]
pub struct Estimate<P> {
    pub method: Method,
    pub sample_k: i64,
    pub poses: Vec<P>,
    pub weights: Option<Vec<f64>>,
}

/// Map belief of one method over a 2D domain, for grid export.
#[derive(Clone, Debug)]
pub struct MapSnapshot {
    pub method: Method,
    pub belief: GaussianMapBelief,
}

#[derive(Clone, Debug)]
pub struct Outcome<P> {
    pub rep: u64,
    pub level: f64,
    pub truth: Vec<P>,
    pub estimates: Vec<Estimate<P>>,
    /// `(method, rmse)` of every point estimate.
    pub scores: Vec<(Method, f64)>,
    /// Filter unique-ancestor count per step.
    pub ancestor_profile: Option<Vec<usize>>,
    pub maps: Vec<MapSnapshot>,
    pub true_map: DVector<f64>,
    pub turn_steps: Vec<usize>,
}

impl<P: PoseLike> Outcome<P> {
    fn new(rep: u64, level: f64, truth: Vec<P>, true_map: DVector<f64>, turn_steps: Vec<usize>) -> Self {
        Outcome {
            rep,
            level,
            truth,
            estimates: Vec::new(),
            scores: Vec::new(),
            ancestor_profile: None,
            maps: Vec::new(),
            true_map,
            turn_steps,
        }
    }

    pub fn samples(&self, method: Method) -> Vec<&Vec<P>> {
        self.estimates
            .iter()
            .filter(|e| e.method == method && e.sample_k >= 0)
            .map(|e| &e.poses)
            .collect()
    }

    pub fn point(&self, method: Method) -> Option<&Vec<P>> {
        self.estimates.iter().find(|e| e.method == method && e.sample_k < 0).map(|e| &e.poses)
    }

    pub fn score(&self, method: Method) -> Option<f64> {
        self.scores.iter().find(|(m, _)| *m == method).map(|(_, r)| *r)
    }
}

/// Per-step unweighted mean of a set of trajectories.
pub fn mean_trajectory<P: PoseLike>(trajectories: &[&Vec<P>]) -> Vec<P> {
    let n = trajectories.len();
    let w = vec![1.0 / n as f64; n];
    (0..trajectories[0].len())
        .map(|t| {
            let poses: Vec<P> = trajectories.iter().map(|tr| tr[t]).collect();
            P::weighted_mean(&poses, &w)
        })
        .collect()
}

/// Runs PF/PS on a SLAM problem and records estimates and unaligned RMSE.
fn particle_methods<D, M>(
    problem: &SlamProblem<D, M>,
    settings: &Settings,
    seed: u64,
    out: &mut Outcome<D::Pose>,
) -> anyhow::Result<()>
where
    D: rbslam_core::MotionModel,
    M: MeasurementModel<Pose = D::Pose>,
{
    let opts = settings.filter_options();
    let (filter, samples) = if settings.wants(Method::Ps) {
        let s = mcmc_smoother_run(problem, &opts, settings.iterations, seed)?;
        (s.filter, s.samples)
    } else {
        (rbpf_as_run(problem, &opts, seed)?, Vec::new())
    };
    out.ancestor_profile = Some(unique_ancestor_profile(&filter.genealogy));
    if settings.wants(Method::Pf) {
        out.scores.push((Method::Pf, pose_rmse(&filter.filtering_means, &out.truth)?));
        let best = filter
            .particles
            .weights
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        out.maps.push(MapSnapshot {
            method: Method::Pf,
            belief: filter.particles.beliefs[best].clone(),
        });
        out.estimates.push(Estimate {
            method: Method::Pf,
            sample_k: -1,
            poses: filter.filtering_means.clone(),
            weights: None,
        });
    }
    if !samples.is_empty() {
        let trajs: Vec<&Vec<D::Pose>> = samples.iter().map(|s| &s.trajectory).collect();
        let mean = mean_trajectory(&trajs);
        out.scores.push((Method::Ps, pose_rmse(&mean, &out.truth)?));
        out.maps.push(MapSnapshot {
            method: Method::Ps,
            belief: samples.last().unwrap().map.clone(),
        });
        out.estimates.push(Estimate {
            method: Method::Ps,
            sample_k: -1,
            poses: mean,
            weights: None,
        });
        for s in samples {
            out.estimates.push(Estimate {
                method: Method::Ps,
                sample_k: s.k as i64,
                poses: s.trajectory,
                weights: None,
            });
        }
    }
    Ok(())
}

fn radio_dynamics() -> PlanarMotion {
    PlanarMotion {
        frame: OdometryFrame::Body,
    }
}

pub fn radio_square_rep(cfg: &RadioSquareConfig, settings: &Settings, seed: u64, rep: u64) -> anyhow::Result<Outcome<PosePlanar>> {
    let model = radio_square_model(cfg)?;
    let run = gen_radio_square(cfg, seed, rep)?;
    radio_rep(&model, &run, settings, seed, rep)
}

pub fn radio_line_rep(cfg: &RadioLineConfig, settings: &Settings, seed: u64, rep: u64) -> anyhow::Result<Outcome<PosePlanar>> {
    let model = radio_line_model(cfg)?;
    let run = gen_radio_line(cfg, seed, rep)?;
    radio_rep(&model, &run, settings, seed, rep)
}

fn radio_rep(
    model: &RadioModel,
    run: &PlanarRun,
    settings: &Settings,
    seed: u64,
    rep: u64,
) -> anyhow::Result<Outcome<PosePlanar>> {
    let dynamics = radio_dynamics();
    let mut out = Outcome::new(rep, 0.0, run.truth.clone(), run.theta.clone(), run.turn_steps.clone());
    let problem = SlamProblem {
        dynamics: &dynamics,
        model,
        inputs: &run.inputs,
        measurements: &run.measurements,
        x0: run.truth[0],
    };
    let seed = rep_seed(seed, rep);
    if settings.wants(Method::Pf) || settings.wants(Method::Ps) {
        particle_methods(&problem, settings, seed, &mut out)?;
    }
    for (m, traj, theta) in ekf_methods(&dynamics, model, &run.inputs, &run.measurements, run.truth[0], settings)? {
        out.scores.push((m, pose_rmse(&traj, &out.truth)?));
        let n = theta.len();
        out.maps.push(MapSnapshot {
            method: m,
            belief: GaussianMapBelief {
                mean: theta,
                cov: DMatrix::zeros(n, n),
            },
        });
        out.estimates.push(Estimate {
            method: m,
            sample_k: -1,
            poses: traj,
            weights: None,
        });
    }
    if settings.wants(Method::Localize) {
        localize(model, run, settings, seed, &mut out)?;
    }
    Ok(out)
}

/// Known-map localization from positions drawn uniformly over the map
/// domain, with the true initial heading.
fn localize(
    model: &RadioModel,
    run: &PlanarRun,
    settings: &Settings,
    seed: u64,
    out: &mut Outcome<PosePlanar>,
) -> anyhow::Result<()> {
    use rand::Rng;
    let n = model.map_dim();
    let map = GaussianMapBelief::new(run.theta.clone(), DMatrix::zeros(n, n))?;
    let lo = model.domain.lower();
    let hi = model.domain.upper();
    let mut rng = substream(seed, Stream::Init, 0, 0, 0);
    let initial: Vec<PosePlanar> = (0..settings.particles)
        .map(|_| {
            PosePlanar::new(
                rng.gen_range(lo[0]..hi[0]),
                rng.gen_range(lo[1]..hi[1]),
                run.truth[0].heading,
            )
        })
        .collect();
    let inputs: Vec<PlanarStep> = run
        .inputs
        .iter()
        .map(|u| {
            let mut u = *u;
            u.noise.qp += Matrix2::identity() * (settings.localize_jitter.powi(2) / u.noise.dt);
            u
        })
        .collect();
    let dynamics = radio_dynamics();
    let filter = localize_known_map(&dynamics, model, &map, &inputs, &run.measurements, initial, seed)?;
    let final_mean = filter.filtering_means.last().unwrap().position;
    let err = (final_mean - run.truth.last().unwrap().position).norm();
    out.scores.push((Method::Localize, err));
    out.estimates.push(Estimate {
        method: Method::Localize,
        sample_k: -1,
        poses: filter.filtering_means,
        weights: None,
    });
    Ok(())
}

fn ekf_methods<D, M>(
    dynamics: &D,
    model: &M,
    inputs: &[D::Input],
    measurements: &[M::Measurement],
    x0: D::Pose,
    settings: &Settings,
) -> anyhow::Result<Vec<(Method, Vec<D::Pose>, DVector<f64>)>>
where
    D: rbslam_core::MotionModel,
    M: MeasurementModel<Pose = D::Pose>,
{
    let mut res = Vec::new();
    if !(settings.wants(Method::Ekf) || settings.wants(Method::Eks)) {
        return Ok(res);
    }
    let ekf = ekf_slam_run(dynamics, model, inputs, measurements, x0)?;
    if settings.wants(Method::Ekf) {
        res.push((Method::Ekf, ekf.trajectory(), ekf.filtered.last().unwrap().theta.clone()));
    }
    if settings.wants(Method::Eks) {
        let s = eks_smooth(&ekf)?;
        let theta = s[0].theta.clone();
        res.push((Method::Eks, s.into_iter().map(|x| x.pose).collect(), theta));
    }
    Ok(res)
}

/// Magnetic loop with magnetometer bias `level`.
pub fn magnetic_rep(
    cfg: &MagneticConfig,
    settings: &Settings,
    seed: u64,
    rep: u64,
    level: f64,
) -> anyhow::Result<Outcome<rbslam_core::Pose3D>> {
    let cfg = MagneticConfig {
        bias: level,
        ..cfg.clone()
    };
    // the same field and odometry for every bias level of a repetition
    let run = gen_magnetic(&cfg, seed, rep)?;
    let model = cfg.inference_model()?;
    let dynamics = SpatialMotion;
    let mut out = Outcome::new(rep, level, run.truth.clone(), run.theta.clone(), Vec::new());
    let problem = SlamProblem {
        dynamics: &dynamics,
        model: &model,
        inputs: &run.inputs,
        measurements: &run.measurements,
        x0: run.truth[0],
    };
    let rseed = rep_seed(seed, rep);
    if settings.wants(Method::Pf) || settings.wants(Method::Ps) {
        particle_methods(&problem, settings, rseed, &mut out)?;
    }
    for (m, traj, _) in ekf_methods(&dynamics, &model, &run.inputs, &run.measurements, run.truth[0], settings)? {
        out.scores.push((m, pose_rmse(&traj, &out.truth)?));
        out.estimates.push(Estimate {
            method: m,
            sample_k: -1,
            poses: traj,
            weights: None,
        });
    }
    out.maps.clear();
    Ok(out)
}

/// Landmark point estimate stored as a map belief without covariance.
fn landmark_snapshot(method: Method, mean: DVector<f64>) -> MapSnapshot {
    let n = mean.len();
    MapSnapshot {
        method,
        belief: GaussianMapBelief {
            mean,
            cov: DMatrix::zeros(n, n),
        },
    }
}

/// Visual landmark loop with initial-landmark perturbation variance `level`.
/// RMSE is computed after the similarity that maps each method's landmark
/// estimate onto the true landmarks.
pub fn visual_rep(cfg: &VisualConfig, settings: &Settings, seed: u64, rep: u64, level: f64) -> anyhow::Result<Outcome<PosePlanar>> {
    let cfg = VisualConfig {
        init_noise_var: level,
        ..cfg.clone()
    };
    let sc = gen_visual2d(&cfg, seed, rep)?;
    let (run, model) = (sc.run, sc.model);
    let dynamics = PlanarMotion {
        frame: OdometryFrame::Navigation,
    };
    let mut out = Outcome::new(rep, level, run.truth.clone(), run.theta.clone(), Vec::new());
    let truth_pos = positions(&run.truth);
    let problem = SlamProblem {
        dynamics: &dynamics,
        model: &model,
        inputs: &run.inputs,
        measurements: &run.measurements,
        x0: run.truth[0],
    };
    let rseed = rep_seed(seed, rep);
    let aligned = |traj: &[PosePlanar], lm: &DVector<f64>| {
        landmark_aligned_rmse(&positions(traj), &truth_pos, lm.as_slice(), run.theta.as_slice())
    };
    if settings.wants(Method::Pf) || settings.wants(Method::Ps) {
        let opts = settings.filter_options();
        let (filter, samples) = if settings.wants(Method::Ps) {
            let s = mcmc_smoother_run(&problem, &opts, settings.iterations, rseed)?;
            (s.filter, s.samples)
        } else {
            (rbpf_as_run(&problem, &opts, rseed)?, Vec::new())
        };
        out.ancestor_profile = Some(unique_ancestor_profile(&filter.genealogy));
        if settings.wants(Method::Pf) {
            let p = &filter.particles;
            let mut lm = DVector::zeros(model.map_dim());
            for (b, w) in p.beliefs.iter().zip(&p.weights) {
                lm += &b.mean * *w;
            }
            out.scores.push((Method::Pf, aligned(&filter.filtering_means, &lm)?));
            out.maps.push(landmark_snapshot(Method::Pf, lm));
            out.estimates.push(Estimate {
                method: Method::Pf,
                sample_k: -1,
                poses: filter.filtering_means.clone(),
                weights: None,
            });
        }
        if !samples.is_empty() {
            let trajs: Vec<&Vec<PosePlanar>> = samples.iter().map(|s| &s.trajectory).collect();
            let mean = mean_trajectory(&trajs);
            let mut lm = DVector::zeros(model.map_dim());
            for s in &samples {
                lm += &s.map.mean / samples.len() as f64;
            }
            out.scores.push((Method::Ps, aligned(&mean, &lm)?));
            out.maps.push(landmark_snapshot(Method::Ps, lm));
            out.estimates.push(Estimate {
                method: Method::Ps,
                sample_k: -1,
                poses: mean,
                weights: None,
            });
            for s in samples {
                out.estimates.push(Estimate {
                    method: Method::Ps,
                    sample_k: s.k as i64,
                    poses: s.trajectory,
                    weights: None,
                });
            }
        }
    }
    for (m, traj, lm) in ekf_methods(&dynamics, &model, &run.inputs, &run.measurements, run.truth[0], settings)? {
        out.scores.push((m, aligned(&traj, &lm)?));
        out.maps.push(landmark_snapshot(m, lm));
        out.estimates.push(Estimate {
            method: m,
            sample_k: -1,
            poses: traj,
            weights: None,
        });
    }
    Ok(out)
}
