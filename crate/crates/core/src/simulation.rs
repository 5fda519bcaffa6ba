//! Scenario generators: ground-truth trajectories, true maps, corrupted
//! odometry and measurements.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DVector, Matrix2, Matrix3, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{
    quat_exp, quat_log, rot2, wrap_angle, PlanarOdometry, PlanarStep, Pose3D, PoseLike, PosePlanar, ProcessNoise3D,
    ProcessNoisePlanar, SpatialOdometry, SpatialStep,
};
use crate::gpmap::{prior_belief, BasisDomain, KernelHyper, MapKind};
use crate::linalg::sample_gaussian;
use crate::rng::{substream, Stream};
use crate::sensors::{Camera, MagneticModel, MeasurementModel, RadioModel, Visual2dModel, VisualMeasurement};
use crate::Result;

/// Scenario selector of an experiment manifest, tagged by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConfig {
    RadioSquare(RadioSquareConfig),
    RadioLine(RadioLineConfig),
    #[serde(rename = "magnetic_3d")]
    Magnetic3d(MagneticConfig),
    #[serde(rename = "visual2d")]
    Visual2d(VisualConfig),
}

impl ScenarioConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ScenarioConfig::RadioSquare(_) => "radio_square",
            ScenarioConfig::RadioLine(_) => "radio_line",
            ScenarioConfig::Magnetic3d(_) => "magnetic_3d",
            ScenarioConfig::Visual2d(_) => "visual2d",
        }
    }
}

/// Ground truth and sensor streams of one simulated experiment. `inputs`
/// has one entry fewer than the time-indexed fields.
#[derive(Clone, Debug)]
pub struct SimulatedRun<P, U, Y> {
    pub truth: Vec<P>,
    pub inputs: Vec<U>,
    pub measurements: Vec<Y>,
    pub theta: DVector<f64>,
    /// Steps `t` whose transition into `t` is a turn.
    pub turn_steps: Vec<usize>,
}

impl<P: PoseLike, U, Y> SimulatedRun<P, U, Y> {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec<f64>> {
        self.truth.iter().map(|p| p.position_slice().to_vec()).collect()
    }
}

pub type PlanarRun = SimulatedRun<PosePlanar, PlanarStep, DVector<f64>>;
pub type MagneticRun = SimulatedRun<Pose3D, SpatialStep, DVector<f64>>;
pub type VisualRun = SimulatedRun<PosePlanar, PlanarStep, VisualMeasurement>;

pub fn sample_map_from_prior<R: Rng + ?Sized>(
    domain: &BasisDomain,
    hyper: &KernelHyper,
    kind: MapKind,
    rng: &mut R,
) -> DVector<f64> {
    let p = prior_belief(domain, hyper, kind);
    sample_gaussian(&p.mean, &p.cov, rng)
}

fn radio_hyper() -> KernelHyper {
    KernelHyper {
        sigma_f2: 2.0,
        ell: 0.25,
        sigma_lin2: 0.0,
        sigma_noise2: 0.01,
    }
}

fn default_basis() -> usize {
    128
}

fn default_step() -> f64 {
    0.1
}

fn default_q_straight() -> f64 {
    1e-6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioSquareConfig {
    #[serde(default = "RadioSquareConfig::default_side")]
    pub side: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_basis")]
    pub basis: usize,
    #[serde(default = "radio_hyper")]
    pub hyper: KernelHyper,
    #[serde(default = "default_q_straight")]
    pub q_straight: f64,
    #[serde(default = "RadioSquareConfig::default_q_turn")]
    pub q_turn: f64,
}

impl RadioSquareConfig {
    fn default_side() -> f64 {
        3.0
    }

    fn default_q_turn() -> f64 {
        0.1 * 0.1
    }
}

impl Default for RadioSquareConfig {
    fn default() -> Self {
        RadioSquareConfig {
            side: Self::default_side(),
            step: default_step(),
            basis: default_basis(),
            hyper: radio_hyper(),
            q_straight: default_q_straight(),
            q_turn: Self::default_q_turn(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadioLineConfig {
    #[serde(default = "RadioLineConfig::default_length")]
    pub length: f64,
    #[serde(default = "default_step")]
    pub step: f64,
    #[serde(default = "default_basis")]
    pub basis: usize,
    #[serde(default = "radio_hyper")]
    pub hyper: KernelHyper,
    #[serde(default = "default_q_straight")]
    pub q_straight: f64,
    #[serde(default = "RadioLineConfig::default_q_turn")]
    pub q_turn: f64,
}

impl RadioLineConfig {
    fn default_length() -> f64 {
        5.0
    }

    fn default_q_turn() -> f64 {
        0.3 * 0.3
    }
}

impl Default for RadioLineConfig {
    fn default() -> Self {
        RadioLineConfig {
            length: Self::default_length(),
            step: default_step(),
            basis: default_basis(),
            hyper: radio_hyper(),
            q_straight: default_q_straight(),
            q_turn: Self::default_q_turn(),
        }
    }
}

/// A planar path described by legs of straight steps separated by in-place
/// turns.
struct PlanarPath {
    start: PosePlanar,
    /// `(straight steps, turn angle after the leg)`; the last turn is unused.
    legs: Vec<(usize, f64)>,
    step: f64,
}

impl PlanarPath {
    /// True increments and flags marking turn transitions.
    fn increments(&self) -> Vec<(PlanarOdometry, bool)> {
        let mut out = Vec::new();
        for (k, &(n, turn)) in self.legs.iter().enumerate() {
            for _ in 0..n {
                out.push((
                    PlanarOdometry {
                        dp: Vector2::new(self.step, 0.0),
                        dheading: 0.0,
                    },
                    false,
                ));
            }
            if k + 1 < self.legs.len() {
                out.push((
                    PlanarOdometry {
                        dp: Vector2::zeros(),
                        dheading: turn,
                    },
                    true,
                ));
            }
        }
        out
    }
}

/// Exact body-frame path with heading-noise-corrupted odometry: the truth
/// follows the nominal increments and the odometry reports
/// `dh − w`, `w ~ N(0, Q_t)`, so the truth is one draw of the dynamic model
/// given the odometry.
fn planar_body_run<R: Rng + ?Sized>(
    path: &PlanarPath,
    q_straight: f64,
    q_turn: f64,
    model: &RadioModel,
    theta: DVector<f64>,
    rng: &mut R,
) -> PlanarRun {
    let mut truth = vec![path.start];
    let mut inputs = Vec::new();
    let mut turn_steps = Vec::new();
    for (odo, is_turn) in path.increments() {
        let cur = *truth.last().unwrap();
        let next = PosePlanar {
            position: cur.position + rot2(cur.heading) * odo.dp,
            heading: wrap_angle(cur.heading + odo.dheading),
        };
        let q = if is_turn { q_turn } else { q_straight };
        let w = q.sqrt() * rng.sample::<f64, _>(StandardNormal);
        inputs.push(PlanarStep {
            odometry: PlanarOdometry {
                dp: odo.dp,
                dheading: odo.dheading - w,
            },
            noise: ProcessNoisePlanar::heading_only(q, 1.0),
        });
        if is_turn {
            turn_steps.push(truth.len());
        }
        truth.push(next);
    }
    let measurements = truth.iter().map(|x| model.simulate(x, &theta, rng)).collect();
    SimulatedRun {
        truth,
        inputs,
        measurements,
        theta,
        turn_steps,
    }
}

fn square_path(cfg: &RadioSquareConfig) -> PlanarPath {
    let n = (cfg.side / cfg.step).round() as usize;
    PlanarPath {
        start: PosePlanar::new(-0.5 * cfg.side, -0.5 * cfg.side, 0.0),
        legs: vec![(n, FRAC_PI_2); 4],
        step: cfg.step,
    }
}

fn line_path(cfg: &RadioLineConfig) -> PlanarPath {
    let n = (cfg.length / cfg.step).round() as usize;
    PlanarPath {
        start: PosePlanar::new(0.0, 0.0, FRAC_PI_2),
        legs: vec![(n, PI), (n, 0.0)],
        step: cfg.step,
    }
}

fn path_bounds(path: &PlanarPath) -> Vec<Vec<f64>> {
    let mut pose = path.start;
    let mut pts = vec![pose.position.as_slice().to_vec()];
    for (odo, _) in path.increments() {
        pose.position += rot2(pose.heading) * odo.dp;
        pose.heading = wrap_angle(pose.heading + odo.dheading);
        pts.push(pose.position.as_slice().to_vec());
    }
    pts
}

/// The radio model the square scenario's data are generated and filtered with.
pub fn radio_square_model(cfg: &RadioSquareConfig) -> Result<RadioModel> {
    let domain = BasisDomain::around_points(&path_bounds(&square_path(cfg)), cfg.hyper.ell, cfg.basis)?;
    Ok(RadioModel::new(domain, cfg.hyper))
}

pub fn radio_line_model(cfg: &RadioLineConfig) -> Result<RadioModel> {
    let domain = BasisDomain::around_points(&path_bounds(&line_path(cfg)), cfg.hyper.ell, cfg.basis)?;
    Ok(RadioModel::new(domain, cfg.hyper))
}

/// Square walk with three 90° turns; position odometry is exact and heading
/// noise is large only at the turns.
pub fn gen_radio_square(cfg: &RadioSquareConfig, seed: u64, rep: u64) -> Result<PlanarRun> {
    let model = radio_square_model(cfg)?;
    let mut rng = substream(seed, Stream::Simulation, rep, 0, 0);
    let theta = sample_map_from_prior(&model.domain, &cfg.hyper, MapKind::Radio, &mut rng);
    Ok(planar_body_run(&square_path(cfg), cfg.q_straight, cfg.q_turn, &model, theta, &mut rng))
}

/// Straight out, turn in place, straight back to the start.
pub fn gen_radio_line(cfg: &RadioLineConfig, seed: u64, rep: u64) -> Result<PlanarRun> {
    let model = radio_line_model(cfg)?;
    let mut rng = substream(seed, Stream::Simulation, rep, 0, 0);
    let theta = sample_map_from_prior(&model.domain, &cfg.hyper, MapKind::Radio, &mut rng);
    Ok(planar_body_run(&line_path(cfg), cfg.q_straight, cfg.q_turn, &model, theta, &mut rng))
}

fn magnetic_hyper() -> KernelHyper {
    KernelHyper {
        sigma_f2: 200.0,
        ell: 1.3,
        sigma_lin2: 650.0,
        sigma_noise2: 10.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagneticConfig {
    #[serde(default = "MagneticConfig::default_steps")]
    pub steps: usize,
    #[serde(default = "MagneticConfig::default_radius")]
    pub radius: f64,
    #[serde(default = "MagneticConfig::default_loops")]
    pub loops: f64,
    #[serde(default = "MagneticConfig::default_height")]
    pub height_amplitude: f64,
    #[serde(default = "MagneticConfig::default_dt")]
    pub dt: f64,
    /// Basis functions used to draw the true field.
    #[serde(default = "MagneticConfig::default_sim_basis")]
    pub simulation_basis: usize,
    /// Basis functions of the map model used for inference.
    #[serde(default = "MagneticConfig::default_inference_basis")]
    pub inference_basis: usize,
    #[serde(default = "magnetic_hyper")]
    pub hyper: KernelHyper,
    /// Position noise covariance diagonal (per second).
    #[serde(default = "MagneticConfig::default_qp")]
    pub qp: [f64; 3],
    /// Orientation noise covariance diagonal (rad², per second).
    #[serde(default = "MagneticConfig::default_qq")]
    pub qq: [f64; 3],
    /// Constant offset added to the body-frame y-axis of the magnetometer.
    #[serde(default)]
    pub bias: f64,
}

impl MagneticConfig {
    fn default_steps() -> usize {
        300
    }
    fn default_radius() -> f64 {
        1.5
    }
    fn default_loops() -> f64 {
        2.0
    }
    fn default_height() -> f64 {
        0.1
    }
    fn default_dt() -> f64 {
        0.01
    }
    fn default_sim_basis() -> usize {
        512
    }
    fn default_inference_basis() -> usize {
        64
    }
    fn default_qp() -> [f64; 3] {
        [0.25, 0.25, 0.01]
    }
    fn default_qq() -> [f64; 3] {
        let d = (PI / 180.0).powi(2);
        [0.01f64.powi(2) * d, 0.01f64.powi(2) * d, 0.3f64.powi(2) * d]
    }

    pub fn noise(&self) -> ProcessNoise3D {
        ProcessNoise3D {
            qp: Matrix3::from_diagonal(&Vector3::from(self.qp)),
            qq: Matrix3::from_diagonal(&Vector3::from(self.qq)),
            dt: self.dt,
        }
    }

    fn path(&self) -> Vec<Pose3D> {
        let n = self.steps;
        (0..n)
            .map(|t| {
                let phi = 2.0 * PI * self.loops * t as f64 / (n - 1).max(1) as f64;
                let p = Vector3::new(
                    self.radius * phi.cos(),
                    self.radius * phi.sin(),
                    self.height_amplitude * (3.0 * phi).sin(),
                );
                let yaw = phi + FRAC_PI_2;
                let tilt = Vector3::new(0.05 * (2.0 * phi).sin(), 0.05 * (5.0 * phi).cos(), 0.0);
                let q = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * quat_exp(&tilt);
                Pose3D::new(p, q)
            })
            .collect()
    }

    fn domain(&self, basis: usize) -> Result<BasisDomain> {
        let pts: Vec<Vec<f64>> = self.path().iter().map(|p| p.position.as_slice().to_vec()).collect();
        BasisDomain::around_points(&pts, self.hyper.ell, basis)
    }

    /// Model the field is simulated with.
    pub fn simulation_model(&self) -> Result<MagneticModel> {
        Ok(MagneticModel {
            domain: self.domain(self.simulation_basis)?,
            hyper: self.hyper,
        })
    }

    /// Model used by the estimators (same box, fewer basis functions).
    pub fn inference_model(&self) -> Result<MagneticModel> {
        Ok(MagneticModel {
            domain: self.domain(self.inference_basis)?,
            hyper: self.hyper,
        })
    }
}

impl Default for MagneticConfig {
    fn default() -> Self {
        MagneticConfig {
            steps: Self::default_steps(),
            radius: Self::default_radius(),
            loops: Self::default_loops(),
            height_amplitude: Self::default_height(),
            dt: Self::default_dt(),
            simulation_basis: Self::default_sim_basis(),
            inference_basis: Self::default_inference_basis(),
            hyper: magnetic_hyper(),
            qp: Self::default_qp(),
            qq: Self::default_qq(),
            bias: 0.0,
        }
    }
}

fn sample3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
}

/// Smooth 3D loop with odometry corrupted according to the 3D dynamic
/// model and a constant unmodelled magnetometer bias on the body y-axis.
pub fn gen_magnetic(cfg: &MagneticConfig, seed: u64, rep: u64) -> Result<MagneticRun> {
    let model = cfg.simulation_model()?;
    let mut rng = substream(seed, Stream::Simulation, rep, 0, 0);
    let theta = sample_map_from_prior(&model.domain, &cfg.hyper, MapKind::Magnetic, &mut rng);
    let truth = cfg.path();
    let noise = cfg.noise();
    let sp = Vector3::from(cfg.qp).map(|v| (v * cfg.dt).sqrt());
    let sq = Vector3::from(cfg.qq).map(|v| (v * cfg.dt).sqrt());
    let mut inputs = Vec::with_capacity(truth.len() - 1);
    for w in truth.windows(2) {
        let ep = sp.component_mul(&sample3(&mut rng));
        let eq = sq.component_mul(&sample3(&mut rng));
        // x' = x ⊙ dq ⊙ exp(e)  ⇒  dq = x⁻¹ x' exp(e)⁻¹
        let mut dq = w[0].orientation.inverse() * w[1].orientation * quat_exp(&eq).inverse();
        dq.renormalize();
        inputs.push(SpatialStep {
            odometry: SpatialOdometry {
                dp: w[1].position - w[0].position - ep,
                dq,
            },
            noise,
        });
    }
    let measurements = truth
        .iter()
        .map(|x| {
            let mut y = model.simulate(x, &theta, &mut rng);
            y[1] += cfg.bias;
            y
        })
        .collect();
    Ok(SimulatedRun {
        truth,
        inputs,
        measurements,
        theta,
        turn_steps: Vec::new(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisualConfig {
    #[serde(default = "VisualConfig::default_steps")]
    pub steps: usize,
    #[serde(default = "VisualConfig::default_radius")]
    pub radius: f64,
    #[serde(default = "VisualConfig::default_loops")]
    pub loops: f64,
    #[serde(default = "VisualConfig::default_landmarks")]
    pub landmarks: usize,
    /// Landmarks are placed on a ring with radii in this interval.
    #[serde(default = "VisualConfig::default_ring")]
    pub landmark_ring: [f64; 2],
    #[serde(default)]
    pub camera: Camera,
    #[serde(default = "VisualConfig::default_sigma_v2")]
    pub sigma_v2: f64,
    /// Constant navigation-frame drift added to every odometry increment.
    #[serde(default = "VisualConfig::default_drift")]
    pub drift: [f64; 2],
    #[serde(default = "VisualConfig::default_qp")]
    pub qp: f64,
    #[serde(default = "VisualConfig::default_qq")]
    pub qq: f64,
    #[serde(default = "VisualConfig::default_prior_var")]
    pub prior_var: f64,
    /// Variance of the Gaussian corruption of the initial landmark means.
    #[serde(default)]
    pub init_noise_var: f64,
}

impl VisualConfig {
    fn default_steps() -> usize {
        197
    }
    fn default_radius() -> f64 {
        2.0
    }
    fn default_loops() -> f64 {
        2.0
    }
    fn default_landmarks() -> usize {
        20
    }
    fn default_ring() -> [f64; 2] {
        [4.5, 5.5]
    }
    fn default_sigma_v2() -> f64 {
        0.1 * 0.1
    }
    fn default_drift() -> [f64; 2] {
        [0.01, 0.0]
    }
    fn default_qp() -> f64 {
        0.04 * 0.04
    }
    fn default_qq() -> f64 {
        1e-12
    }
    fn default_prior_var() -> f64 {
        16.0
    }

    pub fn noise(&self) -> ProcessNoisePlanar {
        ProcessNoisePlanar {
            qp: Matrix2::identity() * self.qp,
            qq: self.qq,
            dt: 1.0,
        }
    }

    fn path(&self) -> Vec<PosePlanar> {
        let n = self.steps;
        (0..n)
            .map(|t| {
                let phi = 2.0 * PI * self.loops * t as f64 / (n - 1).max(1) as f64;
                // optical axis (body y) points radially outward
                PosePlanar::new(self.radius * phi.cos(), self.radius * phi.sin(), phi - FRAC_PI_2)
            })
            .collect()
    }
}

impl Default for VisualConfig {
    fn default() -> Self {
        VisualConfig {
            steps: Self::default_steps(),
            radius: Self::default_radius(),
            loops: Self::default_loops(),
            landmarks: Self::default_landmarks(),
            landmark_ring: Self::default_ring(),
            camera: Camera::default(),
            sigma_v2: Self::default_sigma_v2(),
            drift: Self::default_drift(),
            qp: Self::default_qp(),
            qq: Self::default_qq(),
            prior_var: Self::default_prior_var(),
            init_noise_var: 0.0,
        }
    }
}

/// A visual run together with the landmark model whose prior mean holds the
/// corrupted initial landmark positions.
#[derive(Clone, Debug)]
pub struct VisualScenario {
    pub run: VisualRun,
    pub model: Visual2dModel,
}

/// Camera circling twice inside a ring of landmarks, odometry with a
/// constant drift and white noise.
pub fn gen_visual2d(cfg: &VisualConfig, seed: u64, rep: u64) -> Result<VisualScenario> {
    let mut rng = substream(seed, Stream::Simulation, rep, 0, 0);
    let l = cfg.landmarks;
    let mut theta = DVector::zeros(2 * l);
    for j in 0..l {
        let angle = 2.0 * PI * (j as f64 + rng.gen_range(-0.3..0.3)) / l as f64;
        let r = rng.gen_range(cfg.landmark_ring[0]..cfg.landmark_ring[1]);
        theta[2 * j] = r * angle.cos();
        theta[2 * j + 1] = r * angle.sin();
    }
    let truth = cfg.path();
    let noise = cfg.noise();
    let sp = (cfg.qp * noise.dt).sqrt();
    let sq = (cfg.qq * noise.dt).sqrt();
    let drift = Vector2::from(cfg.drift);
    let inputs: Vec<PlanarStep> = truth
        .windows(2)
        .map(|w| {
            let ep = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * sp;
            let eq = sq * rng.sample::<f64, _>(StandardNormal);
            PlanarStep {
                odometry: PlanarOdometry {
                    dp: w[1].position - w[0].position - ep + drift,
                    dheading: wrap_angle(w[1].heading - w[0].heading - eq),
                },
                noise,
            }
        })
        .collect();
    let init_sd = cfg.init_noise_var.sqrt();
    let prior_mean = DVector::from_fn(2 * l, |i, _| theta[i] + init_sd * rng.sample::<f64, _>(StandardNormal));
    let model = Visual2dModel {
        camera: cfg.camera,
        landmarks: l,
        sigma_v2: cfg.sigma_v2,
        prior_mean,
        prior_var: cfg.prior_var,
    };
    let measurements = truth.iter().map(|x| model.simulate(x, &theta, &mut rng)).collect();
    Ok(VisualScenario {
        run: SimulatedRun {
            truth,
            inputs,
            measurements,
            theta,
            turn_steps: Vec::new(),
        },
        model,
    })
}

/// Noise-free odometry integration from the first true pose.
pub fn dead_reckoning_planar(start: PosePlanar, inputs: &[PlanarStep], body_frame: bool) -> Vec<PosePlanar> {
    let mut out = vec![start];
    for u in inputs {
        let cur = *out.last().unwrap();
        let dp = if body_frame { rot2(cur.heading) * u.odometry.dp } else { u.odometry.dp };
        out.push(PosePlanar {
            position: cur.position + dp,
            heading: wrap_angle(cur.heading + u.odometry.dheading),
        });
    }
    out
}

pub fn dead_reckoning_3d(start: Pose3D, inputs: &[SpatialStep]) -> Vec<Pose3D> {
    let mut out = vec![start];
    for u in inputs {
        let cur = *out.last().unwrap();
        let mut q = cur.orientation * u.odometry.dq;
        q.renormalize();
        out.push(Pose3D::new(cur.position + u.odometry.dp, q));
    }
    out
}

/// Rotation angle between consecutive orientations, for diagnostics.
pub fn rotation_increments(poses: &[Pose3D]) -> Vec<f64> {
    poses
        .windows(2)
        .map(|w| quat_log(&(w[0].orientation.inverse() * w[1].orientation)).norm())
        .collect()
}
