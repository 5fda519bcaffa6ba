//! Oracle checks of the numerical core, runnable from the command line.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

use rbslam_core::geometry::quat_exp;
use rbslam_core::gpmap::update_map;
use rbslam_core::inference::{future_loglik_dense, future_loglik_info, future_loglik_sequential};
use rbslam_core::linalg::{sample_gaussian, spd_cholesky};
use rbslam_core::rng::{substream, Stream};
use rbslam_core::sensors::InfoAccumulator;
use rbslam_core::{
    BasisDomain, Camera, GaussianMapBelief, KernelHyper, MagneticModel, MeasurementModel, Pose3D, PoseLike,
    PosePlanar, RadioModel, Visual2dModel,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyOptions {
    /// Multiplies the spectral density used by the kernel-reconstruction
    /// check; anything but 1 should make it fail.
    pub spectral_scale: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            spectral_scale: 1.0,
            seed: 2024,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub observed: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.observed < self.tolerance
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<28} {:>12} {:>12} {:>8}  status", "check", "observed", "tolerance", "time_s")?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<28} {:>12.3e} {:>12.3e} {:>8.2}  {}",
                c.name,
                c.observed,
                c.tolerance,
                c.seconds,
                if c.passed() { "PASS" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

fn timed(name: &'static str, tolerance: f64, f: impl FnOnce() -> f64) -> CheckResult {
    let start = Instant::now();
    let observed = f();
    CheckResult {
        name,
        // a NaN must not pass
        observed: if observed.is_nan() { f64::INFINITY } else { observed },
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn radio_hyper() -> KernelHyper {
    KernelHyper {
        sigma_f2: 2.0,
        ell: 0.25,
        sigma_lin2: 0.0,
        sigma_noise2: 0.01,
    }
}

fn radio_model(m: usize) -> RadioModel {
    let domain = BasisDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0], m).expect("valid domain");
    RadioModel::new(domain, radio_hyper())
}

fn magnetic_model(m: usize) -> MagneticModel {
    let domain = BasisDomain::new(vec![-2.0, -2.0, -1.0], vec![2.0, 2.0, 1.0], m).expect("valid domain");
    MagneticModel {
        domain,
        hyper: KernelHyper {
            sigma_f2: 200.0,
            ell: 1.3,
            sigma_lin2: 650.0,
            sigma_noise2: 10.0,
        },
    }
}

fn random_planar<R: Rng>(rng: &mut R) -> PosePlanar {
    PosePlanar::new(rng.gen_range(-1.8..1.8), rng.gen_range(-1.8..1.8), rng.gen_range(-3.0..3.0))
}

fn random_spatial<R: Rng>(rng: &mut R) -> Pose3D {
    let p = Vector3::new(rng.gen_range(-1.8..1.8), rng.gen_range(-1.8..1.8), rng.gen_range(-0.8..0.8));
    let r = Vector3::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-3.0..3.0));
    Pose3D::new(p, quat_exp(&r))
}

/// Max mean error and max relative covariance error between recursive
/// updates and the stacked batch posterior.
fn batch_gap<M: MeasurementModel>(model: &M, poses: &[M::Pose], seed: u64) -> (f64, f64) {
    let mut rng = substream(seed, Stream::Simulation, 0, 0, 0);
    let prior = model.prior();
    let theta = sample_gaussian(&prior.mean, &prior.cov, &mut rng);
    let mut belief = prior.clone();
    let mut rows: Vec<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> = Vec::new();
    for x in poses {
        let y = model.simulate(x, &theta, &mut rng);
        let obs = model.observe(x, &belief.mean, &y).expect("linear models always observe");
        belief = update_map(&belief, &obs.c, &obs.sigma, &obs.y).expect("update").0;
        rows.push((obs.c, obs.y, obs.sigma));
    }
    let n = prior.dim();
    let total: usize = rows.iter().map(|r| r.1.len()).sum();
    let mut cbar = DMatrix::zeros(total, n);
    let mut ybar = DVector::zeros(total);
    let mut sbar = DMatrix::zeros(total, total);
    let mut at = 0;
    for (c, y, s) in &rows {
        let k = y.len();
        cbar.view_mut((at, 0), (k, n)).copy_from(c);
        ybar.rows_mut(at, k).copy_from(y);
        sbar.view_mut((at, at), (k, k)).copy_from(s);
        at += k;
    }
    let pct = &prior.cov * cbar.transpose();
    let chol = spd_cholesky(&cbar * &pct + sbar).expect("batch innovation");
    let gain_t = chol.solve(&pct.transpose());
    let mean = &prior.mean + gain_t.transpose() * (&ybar - &cbar * &prior.mean);
    let cov = &prior.cov - &pct * &gain_t;
    let mean_err = (&belief.mean - mean).amax();
    let cov_err = (&belief.cov - &cov).amax() / cov.amax();
    (mean_err, cov_err)
}

/// Recursive map updates against the batch posterior over 200 steps, for
/// the scalar radio and the three-axis magnetic model.
pub fn rb_batch_equivalence(seed: u64) -> (f64, f64) {
    let mut rng = substream(seed, Stream::Init, 1, 0, 0);
    let radio = radio_model(64);
    let planar: Vec<PosePlanar> = (0..200).map(|_| random_planar(&mut rng)).collect();
    let (m1, c1) = batch_gap(&radio, &planar, seed);
    let magnetic = magnetic_model(32);
    let spatial: Vec<Pose3D> = (0..200).map(|_| random_spatial(&mut rng)).collect();
    let (m2, c2) = batch_gap(&magnetic, &spatial, seed + 1);
    (m1.max(m2), c1.max(c2))
}

fn chain_rule_case<M: MeasurementModel, R: Rng>(model: &M, poses: &[M::Pose], warmup: usize, rng: &mut R) -> f64 {
    let prior = model.prior();
    let theta = sample_gaussian(&prior.mean, &prior.cov, rng);
    let mut belief: GaussianMapBelief = prior;
    for x in &poses[..warmup] {
        let y = model.simulate(x, &theta, rng);
        let obs = model.observe(x, &belief.mean, &y).expect("linear models always observe");
        belief.update(&obs.c, &obs.sigma, &obs.y).expect("update");
    }
    // perturb the mean so the belief is not centred on the data
    for v in belief.mean.iter_mut() {
        *v += rng.gen_range(-0.1..0.1);
    }
    let n = belief.dim();
    let mut observations = Vec::new();
    let mut acc = InfoAccumulator::new(DVector::zeros(n));
    for x in &poses[warmup..] {
        let y = model.simulate(x, &theta, rng);
        let obs = model.observe(x, &belief.mean, &y).expect("linear models always observe");
        acc.add(&obs).expect("accumulate");
        observations.push(obs);
    }
    let ny = observations[0].y.len();
    let mut cbar = DMatrix::zeros(observations.len() * ny, n);
    let mut ybar = DVector::zeros(observations.len() * ny);
    for (k, o) in observations.iter().enumerate() {
        cbar.view_mut((k * ny, 0), (ny, n)).copy_from(&o.c);
        ybar.rows_mut(k * ny, ny).copy_from(&o.y);
    }
    let dense = future_loglik_dense(&belief, &cbar, &ybar, &observations[0].sigma).expect("dense");
    let seq = future_loglik_sequential(&belief, &observations).expect("sequential");
    let info = future_loglik_info(&belief, &acc).expect("information form");
    (dense - seq).abs().max((dense - info).abs())
}

/// Stacked versus chain-rule future log-likelihood over 100 random
/// (belief, reference) cases; half radio, half magnetic.
pub fn chain_rule_identity(seed: u64) -> f64 {
    let radio = radio_model(48);
    let magnetic = magnetic_model(24);
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let mut rng = substream(seed, Stream::Init, 2, case, 0);
        let len = rng.gen_range(8..20);
        let warmup = rng.gen_range(0..5);
        let err = if case % 2 == 0 {
            let poses: Vec<PosePlanar> = (0..len).map(|_| random_planar(&mut rng)).collect();
            chain_rule_case(&radio, &poses, warmup.min(len - 1), &mut rng)
        } else {
            let poses: Vec<Pose3D> = (0..len).map(|_| random_spatial(&mut rng)).collect();
            chain_rule_case(&magnetic, &poses, warmup.min(len - 1), &mut rng)
        };
        worst = worst.max(err);
    }
    worst
}

/// Worst error of the `m = 128` reduced-rank SE kernel over interior point
/// pairs, relative to `σ_f²`.
pub fn kernel_reconstruction(seed: u64, spectral_scale: f64) -> f64 {
    let h = radio_hyper();
    let d = BasisDomain::new(vec![-2.0, -2.0], vec![2.0, 2.0], 128).expect("valid domain");
    let s = DVector::from_vec(d.spectral_weights(&h)) * spectral_scale;
    let mut rng = substream(seed, Stream::Init, 3, 0, 0);
    let margin = 2.0 * h.ell;
    let mut worst = 0.0f64;
    let mut n = 0;
    while n < 2000 {
        let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.5..1.5)).collect();
        // half of the pairs coincide, the rest are within a few lengthscales
        let y: Vec<f64> = if n % 2 == 0 {
            x.clone()
        } else {
            x.iter().map(|v| v + rng.gen_range(-0.75..0.75)).collect()
        };
        if !d.is_interior(&y, margin) {
            continue;
        }
        let approx = d.eval(&x).component_mul(&s).dot(&d.eval(&y));
        worst = worst.max((approx - h.se_kernel(&x, &y)).abs());
        n += 1;
    }
    worst / h.sigma_f2
}

/// Central differences of the EKF residual against the analytic pose and
/// map Jacobians; relative to the largest entry of each column.
fn ekf_jacobian_gap<M: MeasurementModel>(model: &M, pose: &M::Pose, theta: &DVector<f64>, y: &M::Measurement) -> f64 {
    let obs = model.ekf_observe(pose, theta, y).expect("observation at the check pose");
    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..M::Pose::DOF {
        let mut d = vec![0.0; M::Pose::DOF];
        d[k] = h;
        let rp = model.ekf_observe(&pose.retract(&d), theta, y).expect("observation").residual;
        d[k] = -h;
        let rm = model.ekf_observe(&pose.retract(&d), theta, y).expect("observation").residual;
        let fd = -(rp - rm) / (2.0 * h);
        let col = obs.h_pose.column(k);
        worst = worst.max((fd - col).amax() / col.amax().max(1.0));
    }
    for j in 0..theta.len() {
        let mut tp = theta.clone();
        tp[j] += h;
        let mut tm = theta.clone();
        tm[j] -= h;
        let fd = -(model.ekf_observe(pose, &tp, y).expect("observation").residual
            - model.ekf_observe(pose, &tm, y).expect("observation").residual)
            / (2.0 * h);
        let col = obs.h_map.column(j);
        worst = worst.max((fd - col).amax() / col.amax().max(1.0));
    }
    worst
}

/// Analytic measurement Jacobians of the three sensor models against
/// finite differences.
pub fn jacobian_checks(seed: u64) -> f64 {
    let mut rng = substream(seed, Stream::Init, 4, 0, 0);
    let mut worst = 0.0f64;

    let radio = radio_model(32);
    let p = radio.prior();
    for _ in 0..5 {
        let theta = sample_gaussian(&p.mean, &p.cov, &mut rng);
        let x = random_planar(&mut rng);
        let y = radio.simulate(&x, &theta, &mut rng);
        worst = worst.max(ekf_jacobian_gap(&radio, &x, &theta, &y));
    }

    let magnetic = magnetic_model(24);
    let p = magnetic.prior();
    for _ in 0..5 {
        let theta = sample_gaussian(&p.mean, &p.cov, &mut rng);
        let x = random_spatial(&mut rng);
        let y = magnetic.simulate(&x, &theta, &mut rng);
        worst = worst.max(ekf_jacobian_gap(&magnetic, &x, &theta, &y));
    }

    let landmarks = 6;
    let mut theta = DVector::zeros(2 * landmarks);
    for j in 0..landmarks {
        let a = j as f64 * std::f64::consts::TAU / landmarks as f64;
        let r = rng.gen_range(3.0..5.0);
        theta[2 * j] = r * a.cos();
        theta[2 * j + 1] = r * a.sin();
    }
    let visual = Visual2dModel {
        camera: Camera::default(),
        landmarks,
        sigma_v2: 0.01,
        prior_mean: theta.clone(),
        prior_var: 16.0,
    };
    let mut checked = 0;
    while checked < 5 {
        let x = PosePlanar::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0));
        let y = visual.simulate(&x, &theta, &mut rng);
        if y.iter().all(Option::is_none) {
            continue;
        }
        worst = worst.max(ekf_jacobian_gap(&visual, &x, &theta, &y));
        checked += 1;
    }
    worst
}

pub const RB_TOLERANCE: f64 = 1e-8;
pub const CHAIN_RULE_TOLERANCE: f64 = 1e-6;
pub const KERNEL_TOLERANCE: f64 = 0.05;
pub const JACOBIAN_TOLERANCE: f64 = 1e-5;

pub fn verify_suite(opts: &VerifyOptions) -> Report {
    let seed = opts.seed;
    let mut rb = (0.0, 0.0);
    let mut checks = vec![timed("rb_batch_mean", RB_TOLERANCE, || {
        rb = rb_batch_equivalence(seed);
        rb.0
    })];
    checks.push(CheckResult {
        name: "rb_batch_cov_relative",
        observed: rb.1,
        tolerance: RB_TOLERANCE,
        seconds: 0.0,
    });
    checks.push(timed("chain_rule_identity", CHAIN_RULE_TOLERANCE, || chain_rule_identity(seed)));
    checks.push(timed("kernel_reconstruction", KERNEL_TOLERANCE, || {
        kernel_reconstruction(seed, opts.spectral_scale)
    }));
    checks.push(timed("jacobians", JACOBIAN_TOLERANCE, || jacobian_checks(seed)));
    Report { checks }
}
