//! Poses, rotation algebra and the odometry-driven motion models.

use std::f64::consts::PI;
use std::fmt::Debug;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::degenerate_gaussian_logpdf;
use crate::{Error, Result};

/// Residuals inside a zero-variance direction must be below this to count as
/// reachable.
pub const DIRAC_TOLERANCE: f64 = 1e-9;

const QUAT_TOLERANCE: f64 = 1e-6;

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn rot2(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// Derivative of [`rot2`] with respect to the angle.
pub fn rot2_derivative(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

/// Unit quaternion of the rotation vector `v` (radians, half-angle form).
pub fn quat_exp(v: &Vector3<f64>) -> UnitQuaternion<f64> {
    let angle = v.norm();
    if angle == 0.0 {
        return UnitQuaternion::identity();
    }
    let half = 0.5 * angle;
    let s = half.sin() / angle;
    UnitQuaternion::new_unchecked(Quaternion::new(half.cos(), s * v.x, s * v.y, s * v.z))
}

/// Rotation vector of a unit quaternion; inverse of [`quat_exp`] on angles
/// below π.
pub fn quat_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let vn = v.norm();
    if vn < 1e-12 {
        return v * 2.0;
    }
    let angle = 2.0 * vn.atan2(w);
    v * (angle / vn)
}

pub fn quat_to_rotmat(q: &Quaternion<f64>) -> Result<Matrix3<f64>> {
    let norm = q.norm();
    if (norm - 1.0).abs() > QUAT_TOLERANCE {
        return Err(Error::InvalidQuaternion { norm });
    }
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Ok(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

fn unit_rotmat(q: &UnitQuaternion<f64>) -> Matrix3<f64> {
    quat_to_rotmat(q.quaternion()).expect("unit quaternion")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosePlanar {
    pub position: Vector2<f64>,
    /// Heading in `(-π, π]`.
    pub heading: f64,
}

impl PosePlanar {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        PosePlanar {
            position: Vector2::new(x, y),
            heading: wrap_angle(heading),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub position: Vector3<f64>,
    /// Body-to-navigation rotation `q^nb`.
    pub orientation: UnitQuaternion<f64>,
}

impl Pose3D {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Pose3D {
            position,
            orientation,
        }
    }

    /// `R(q^nb)`, mapping body-frame vectors to the navigation frame.
    pub fn rotation_nb(&self) -> Matrix3<f64> {
        unit_rotmat(&self.orientation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarOdometry {
    pub dp: Vector2<f64>,
    pub dheading: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialOdometry {
    pub dp: Vector3<f64>,
    pub dq: UnitQuaternion<f64>,
}

/// Planar process noise: `e_p ~ N(0, dt Qp)` in the navigation frame and
/// `w ~ N(0, dt Qq)` on the heading.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoisePlanar {
    pub qp: Matrix2<f64>,
    pub qq: f64,
    pub dt: f64,
}

impl ProcessNoisePlanar {
    pub fn heading_only(qq: f64, dt: f64) -> Self {
        ProcessNoisePlanar {
            qp: Matrix2::zeros(),
            qq,
            dt,
        }
    }
}

/// 3D process noise: `e_p ~ N(0, dt Qp)`, rotation-vector noise
/// `e_q ~ N(0, dt Qq)` applied on the right.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoise3D {
    pub qp: Matrix3<f64>,
    pub qq: Matrix3<f64>,
    pub dt: f64,
}

fn sample_planar_noise<R: Rng + ?Sized>(noise: &ProcessNoisePlanar, rng: &mut R) -> (Vector2<f64>, f64) {
    let ep = if noise.qp == Matrix2::zeros() {
        Vector2::zeros()
    } else {
        let a = psd_sqrt2(&(noise.qp * noise.dt));
        a * Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    };
    let w = if noise.qq > 0.0 {
        (noise.dt * noise.qq).sqrt() * rng.sample::<f64, _>(StandardNormal)
    } else {
        0.0
    };
    (ep, w)
}

fn psd_sqrt2(m: &Matrix2<f64>) -> Matrix2<f64> {
    if m[(0, 1)] == 0.0 && m[(1, 0)] == 0.0 {
        return Matrix2::new(m[(0, 0)].max(0.0).sqrt(), 0.0, 0.0, m[(1, 1)].max(0.0).sqrt());
    }
    let d = DMatrix::from_column_slice(2, 2, m.as_slice());
    let a = crate::linalg::psd_sqrt(&d);
    Matrix2::from_column_slice(a.as_slice())
}

fn psd_sqrt3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let diagonal = (0..3).all(|i| (0..3).all(|j| i == j || m[(i, j)] == 0.0));
    if diagonal {
        return Matrix3::from_diagonal(&Vector3::new(
            m[(0, 0)].max(0.0).sqrt(),
            m[(1, 1)].max(0.0).sqrt(),
            m[(2, 2)].max(0.0).sqrt(),
        ));
    }
    let d = DMatrix::from_column_slice(3, 3, m.as_slice());
    let a = crate::linalg::psd_sqrt(&d);
    Matrix3::from_column_slice(a.as_slice())
}

fn sample3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Body-frame odometry step: `p' = p + R(h) dp + e_p`, `h' = h + dh + w`.
pub fn propagate_planar<R: Rng + ?Sized>(
    pose: &PosePlanar,
    odo: &PlanarOdometry,
    noise: &ProcessNoisePlanar,
    rng: &mut R,
) -> PosePlanar {
    let (ep, w) = sample_planar_noise(noise, rng);
    PosePlanar {
        position: pose.position + rot2(pose.heading) * odo.dp + ep,
        heading: wrap_angle(pose.heading + odo.dheading + w),
    }
}

/// Navigation-frame odometry step: `p' = p + dp + e_p`, `h' = h + dh + w`.
pub fn propagate_planar_additive<R: Rng + ?Sized>(
    pose: &PosePlanar,
    odo: &PlanarOdometry,
    noise: &ProcessNoisePlanar,
    rng: &mut R,
) -> PosePlanar {
    let (ep, w) = sample_planar_noise(noise, rng);
    PosePlanar {
        position: pose.position + odo.dp + ep,
        heading: wrap_angle(pose.heading + odo.dheading + w),
    }
}

/// `p' = p + dp + e_p`, `q' = q ⊙ dq ⊙ exp(e_q)`, renormalized.
pub fn propagate_3d<R: Rng + ?Sized>(
    pose: &Pose3D,
    odo: &SpatialOdometry,
    noise: &ProcessNoise3D,
    rng: &mut R,
) -> Pose3D {
    let ep = if noise.qp == Matrix3::zeros() {
        Vector3::zeros()
    } else {
        psd_sqrt3(&(noise.qp * noise.dt)) * sample3(rng)
    };
    let eq = if noise.qq == Matrix3::zeros() {
        Vector3::zeros()
    } else {
        psd_sqrt3(&(noise.qq * noise.dt)) * sample3(rng)
    };
    let mut q = pose.orientation * odo.dq * quat_exp(&eq);
    q.renormalize();
    Pose3D {
        position: pose.position + odo.dp + ep,
        orientation: q,
    }
}

/// Pose types usable by the filters: a manifold with a local error-state
/// parameterization.
pub trait PoseLike: Clone + Copy + Debug + PartialEq + Send + Sync {
    /// Dimension of the error state.
    const DOF: usize;
    /// Dimension of the position.
    const POS_DIM: usize;

    fn position_slice(&self) -> &[f64];
    /// Yaw angle, used for smoothness statistics and export.
    fn yaw(&self) -> f64;
    /// `self ⊞ delta`.
    fn retract(&self, delta: &[f64]) -> Self;
    /// `other ⊟ self`.
    fn local(&self, other: &Self) -> Vec<f64>;
    fn weighted_mean(poses: &[Self], weights: &[f64]) -> Self;
    /// Orientation columns for CSV export.
    fn orientation_fields(&self) -> Vec<f64>;
}

impl PoseLike for PosePlanar {
    const DOF: usize = 3;
    const POS_DIM: usize = 2;

    fn position_slice(&self) -> &[f64] {
        self.position.as_slice()
    }

    fn yaw(&self) -> f64 {
        self.heading
    }

    fn retract(&self, d: &[f64]) -> Self {
        PosePlanar {
            position: self.position + Vector2::new(d[0], d[1]),
            heading: wrap_angle(self.heading + d[2]),
        }
    }

    fn local(&self, other: &Self) -> Vec<f64> {
        let dp = other.position - self.position;
        vec![dp.x, dp.y, wrap_angle(other.heading - self.heading)]
    }

    fn weighted_mean(poses: &[Self], weights: &[f64]) -> Self {
        let mut p = Vector2::zeros();
        let (mut s, mut c) = (0.0, 0.0);
        for (pose, &w) in poses.iter().zip(weights) {
            p += pose.position * w;
            s += w * pose.heading.sin();
            c += w * pose.heading.cos();
        }
        PosePlanar {
            position: p,
            heading: s.atan2(c),
        }
    }

    fn orientation_fields(&self) -> Vec<f64> {
        vec![self.heading]
    }
}

impl PoseLike for Pose3D {
    const DOF: usize = 6;
    const POS_DIM: usize = 3;

    fn position_slice(&self) -> &[f64] {
        self.position.as_slice()
    }

    fn yaw(&self) -> f64 {
        self.orientation.euler_angles().2
    }

    fn retract(&self, d: &[f64]) -> Self {
        let mut q = self.orientation * quat_exp(&Vector3::new(d[3], d[4], d[5]));
        q.renormalize();
        Pose3D {
            position: self.position + Vector3::new(d[0], d[1], d[2]),
            orientation: q,
        }
    }

    fn local(&self, other: &Self) -> Vec<f64> {
        let dp = other.position - self.position;
        let dq = quat_log(&(self.orientation.inverse() * other.orientation));
        vec![dp.x, dp.y, dp.z, dq.x, dq.y, dq.z]
    }

    fn weighted_mean(poses: &[Self], weights: &[f64]) -> Self {
        let mut p = Vector3::zeros();
        let reference = poses[0].orientation.into_inner();
        let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
        for (pose, &w) in poses.iter().zip(weights) {
            p += pose.position * w;
            let q = pose.orientation.into_inner();
            let sign = if q.dot(&reference) < 0.0 { -1.0 } else { 1.0 };
            acc += q * (w * sign);
        }
        Pose3D {
            position: p,
            orientation: UnitQuaternion::from_quaternion(acc),
        }
    }

    fn orientation_fields(&self) -> Vec<f64> {
        let q = self.orientation.quaternion();
        vec![q.w, q.i, q.j, q.k]
    }
}

/// A (possibly stochastic) state transition driven by odometry.
pub trait MotionModel: Send + Sync {
    type Pose: PoseLike;
    type Input: Clone + Debug + Send + Sync;

    fn propagate<R: Rng + ?Sized>(&self, pose: &Self::Pose, input: &Self::Input, rng: &mut R) -> Self::Pose;

    /// The noiseless transition.
    fn predict_mean(&self, pose: &Self::Pose, input: &Self::Input) -> Self::Pose;

    /// `log p(to | from, input)`, `-inf` when unreachable. Zero-variance
    /// components only gate reachability and add no density, so values are
    /// comparable across `from` for a fixed `to`.
    fn transition_logpdf(&self, from: &Self::Pose, input: &Self::Input, to: &Self::Pose) -> f64;

    /// True if some direction of the process noise has zero variance, which
    /// makes the transition density a Dirac in that direction.
    fn has_dirac_component(&self, input: &Self::Input) -> bool;

    /// Error-state Jacobian `F` and discrete process covariance for EKF use.
    fn error_jacobian(&self, pose: &Self::Pose, input: &Self::Input) -> (DMatrix<f64>, DMatrix<f64>);
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdometryFrame {
    /// Position increments are rotated by the current heading.
    Body,
    /// Position increments are already in the navigation frame.
    Navigation,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarStep {
    pub odometry: PlanarOdometry,
    pub noise: ProcessNoisePlanar,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialStep {
    pub odometry: SpatialOdometry,
    pub noise: ProcessNoise3D,
}

#[derive(Clone, Copy, Debug)]
pub struct PlanarMotion {
    pub frame: OdometryFrame,
}

impl PlanarMotion {
    fn mean_position(&self, pose: &PosePlanar, odo: &PlanarOdometry) -> Vector2<f64> {
        match self.frame {
            OdometryFrame::Body => pose.position + rot2(pose.heading) * odo.dp,
            OdometryFrame::Navigation => pose.position + odo.dp,
        }
    }
}

impl MotionModel for PlanarMotion {
    type Pose = PosePlanar;
    type Input = PlanarStep;

    fn propagate<R: Rng + ?Sized>(&self, pose: &PosePlanar, input: &PlanarStep, rng: &mut R) -> PosePlanar {
        match self.frame {
            OdometryFrame::Body => propagate_planar(pose, &input.odometry, &input.noise, rng),
            OdometryFrame::Navigation => propagate_planar_additive(pose, &input.odometry, &input.noise, rng),
        }
    }

    fn predict_mean(&self, pose: &PosePlanar, input: &PlanarStep) -> PosePlanar {
        PosePlanar {
            position: self.mean_position(pose, &input.odometry),
            heading: wrap_angle(pose.heading + input.odometry.dheading),
        }
    }

    fn transition_logpdf(&self, from: &PosePlanar, input: &PlanarStep, to: &PosePlanar) -> f64 {
        let dp = to.position - self.mean_position(from, &input.odometry);
        let dh = wrap_angle(to.heading - from.heading - input.odometry.dheading);
        let n = &input.noise;
        let r = DVector::from_vec(vec![dp.x, dp.y, dh]);
        let mut cov = DMatrix::zeros(3, 3);
        cov.view_mut((0, 0), (2, 2)).copy_from(&(n.qp * n.dt));
        cov[(2, 2)] = n.qq * n.dt;
        degenerate_gaussian_logpdf(&r, &cov, DIRAC_TOLERANCE)
    }

    fn has_dirac_component(&self, input: &PlanarStep) -> bool {
        let n = &input.noise;
        !(n.dt > 0.0 && n.qq > 0.0 && n.qp.determinant() > 0.0)
    }

    fn error_jacobian(&self, pose: &PosePlanar, input: &PlanarStep) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut f = DMatrix::identity(3, 3);
        if self.frame == OdometryFrame::Body {
            let d = rot2_derivative(pose.heading) * input.odometry.dp;
            f[(0, 2)] = d.x;
            f[(1, 2)] = d.y;
        }
        let n = &input.noise;
        let mut q = DMatrix::zeros(3, 3);
        q.view_mut((0, 0), (2, 2)).copy_from(&(n.qp * n.dt));
        q[(2, 2)] = n.qq * n.dt;
        (f, q)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SpatialMotion;

impl MotionModel for SpatialMotion {
    type Pose = Pose3D;
    type Input = SpatialStep;

    fn propagate<R: Rng + ?Sized>(&self, pose: &Pose3D, input: &SpatialStep, rng: &mut R) -> Pose3D {
        propagate_3d(pose, &input.odometry, &input.noise, rng)
    }

    fn predict_mean(&self, pose: &Pose3D, input: &SpatialStep) -> Pose3D {
        let mut q = pose.orientation * input.odometry.dq;
        q.renormalize();
        Pose3D {
            position: pose.position + input.odometry.dp,
            orientation: q,
        }
    }

    fn transition_logpdf(&self, from: &Pose3D, input: &SpatialStep, to: &Pose3D) -> f64 {
        let mean = self.predict_mean(from, input);
        let r = DVector::from_vec(mean.local(to));
        let n = &input.noise;
        let mut cov = DMatrix::zeros(6, 6);
        cov.view_mut((0, 0), (3, 3)).copy_from(&(n.qp * n.dt));
        cov.view_mut((3, 3), (3, 3)).copy_from(&(n.qq * n.dt));
        degenerate_gaussian_logpdf(&r, &cov, DIRAC_TOLERANCE)
    }

    fn has_dirac_component(&self, input: &SpatialStep) -> bool {
        let n = &input.noise;
        !(n.dt > 0.0 && n.qq.determinant() > 0.0 && n.qp.determinant() > 0.0)
    }

    fn error_jacobian(&self, _pose: &Pose3D, input: &SpatialStep) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut f = DMatrix::identity(6, 6);
        let rt = unit_rotmat(&input.odometry.dq).transpose();
        f.view_mut((3, 3), (3, 3)).copy_from(&rt);
        let n = &input.noise;
        let mut q = DMatrix::zeros(6, 6);
        q.view_mut((0, 0), (3, 3)).copy_from(&(n.qp * n.dt));
        q.view_mut((3, 3), (3, 3)).copy_from(&(n.qq * n.dt));
        (f, q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::skew;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn expm_series(a: &Matrix3<f64>) -> Matrix3<f64> {
        let mut term = Matrix3::identity();
        let mut acc = Matrix3::identity();
        for k in 1..40 {
            term = term * a / k as f64;
            acc += term;
        }
        acc
    }

    #[test]
    fn quat_exp_identity_and_half_angle() {
        let q = quat_exp(&Vector3::zeros());
        assert_eq!(q.quaternion().coords, nalgebra::Vector4::new(0.0, 0.0, 0.0, 1.0));
        let q = quat_exp(&Vector3::new(0.0, 0.0, PI));
        let q = q.quaternion();
        assert!(q.w.abs() < 1e-15 && q.i.abs() < 1e-15 && q.j.abs() < 1e-15);
        assert!((q.k - 1.0).abs() < 1e-15);
    }

    #[test]
    fn quat_exp_matches_matrix_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let v = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let r = quat_to_rotmat(quat_exp(&v).quaternion()).unwrap();
            let e = expm_series(&skew(&v));
            assert!((r - e).abs().max() < 1e-10);
        }
    }

    #[test]
    fn quat_log_inverts_exp() {
        let v = Vector3::new(0.3, -1.2, 0.7);
        assert!((quat_log(&quat_exp(&v)) - v).norm() < 1e-12);
    }

    #[test]
    fn rotmat_properties() {
        assert_eq!(quat_to_rotmat(&Quaternion::identity()).unwrap(), Matrix3::identity());
        let r = quat_to_rotmat(quat_exp(&Vector3::new(0.0, 0.0, FRAC_PI_2)).quaternion()).unwrap();
        assert!((r * Vector3::x() - Vector3::y()).norm() < 1e-15);
        let bad = Quaternion::new(1.0, 0.5, 0.0, 0.0);
        assert!(matches!(quat_to_rotmat(&bad), Err(Error::InvalidQuaternion { .. })));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = quat_exp(&(sample3(&mut rng) * 2.0));
            let b = quat_exp(&(sample3(&mut rng) * 2.0));
            let ra = unit_rotmat(&a);
            let rb = unit_rotmat(&b);
            let rab = unit_rotmat(&(a * b));
            assert!((rab - ra * rb).abs().max() < 1e-12);
            assert!((ra.determinant() - 1.0).abs() < 1e-12);
            assert!((ra.transpose() - unit_rotmat(&a.inverse())).abs().max() < 1e-12);
        }
    }

    #[test]
    fn planar_rotation_group() {
        for (a, b) in [(0.3, 2.9), (-1.0, 4.0), (3.1, 3.1)] {
            assert!((rot2(a) * rot2(b) - rot2(a + b)).abs().max() < 1e-12);
        }
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn planar_deterministic_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = ProcessNoisePlanar::heading_only(0.0, 1.0);
        let odo = PlanarOdometry {
            dp: Vector2::new(1.0, 0.0),
            dheading: 0.0,
        };
        let p = propagate_planar(&PosePlanar::new(0.0, 0.0, 0.0), &odo, &noise, &mut rng);
        assert_eq!(p, PosePlanar::new(1.0, 0.0, 0.0));
        let p = propagate_planar(&PosePlanar::new(0.0, 0.0, FRAC_PI_2), &odo, &noise, &mut rng);
        assert!((p.position - Vector2::new(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn planar_heading_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dt = 0.5;
        let noise = ProcessNoisePlanar::heading_only(0.1f64.powi(2), dt);
        let odo = PlanarOdometry {
            dp: Vector2::zeros(),
            dheading: 0.0,
        };
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| propagate_planar(&PosePlanar::new(0.0, 0.0, 0.0), &odo, &noise, &mut rng).heading)
            .collect();
        let var = draws.iter().map(|h| h * h).sum::<f64>() / n as f64;
        assert!((var / (dt * 0.01) - 1.0).abs() < 0.05);
    }

    #[test]
    fn spatial_composition_and_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zero = ProcessNoise3D {
            qp: Matrix3::zeros(),
            qq: Matrix3::zeros(),
            dt: 0.01,
        };
        let start = Pose3D::new(Vector3::new(1.0, 2.0, 3.0), UnitQuaternion::identity());
        let still = SpatialOdometry {
            dp: Vector3::zeros(),
            dq: UnitQuaternion::identity(),
        };
        assert_eq!(propagate_3d(&start, &still, &zero, &mut rng), start);

        let quarter = SpatialOdometry {
            dp: Vector3::zeros(),
            dq: quat_exp(&Vector3::new(0.0, 0.0, FRAC_PI_2)),
        };
        let p = propagate_3d(&propagate_3d(&start, &quarter, &zero, &mut rng), &quarter, &zero, &mut rng);
        let half = quat_exp(&Vector3::new(0.0, 0.0, PI));
        assert!(p.orientation.angle_to(&half) < 1e-12);

        let noisy = ProcessNoise3D {
            qp: Matrix3::from_diagonal(&Vector3::new(0.25, 0.25, 0.01)),
            qq: Matrix3::from_diagonal(&Vector3::new(1e-3, 1e-3, 1e-2)),
            dt: 0.01,
        };
        let odo = SpatialOdometry {
            dp: Vector3::new(0.01, 0.0, 0.0),
            dq: quat_exp(&Vector3::new(0.01, 0.02, 0.03)),
        };
        let mut pose = start;
        for _ in 0..10_000 {
            pose = propagate_3d(&pose, &odo, &noisy, &mut rng);
            assert!((pose.orientation.quaternion().norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn spatial_position_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let qp = Matrix3::new(0.25, 0.05, 0.0, 0.05, 0.25, 0.0, 0.0, 0.0, 0.01);
        let noise = ProcessNoise3D {
            qp,
            qq: Matrix3::zeros(),
            dt: 0.01,
        };
        let odo = SpatialOdometry {
            dp: Vector3::zeros(),
            dq: UnitQuaternion::identity(),
        };
        let start = Pose3D::new(Vector3::zeros(), UnitQuaternion::identity());
        let n = 100_000;
        let mut cov = Matrix3::zeros();
        for _ in 0..n {
            let p = propagate_3d(&start, &odo, &noise, &mut rng).position;
            cov += p * p.transpose();
        }
        cov /= n as f64;
        let expected = qp * 0.01;
        for i in 0..3 {
            assert!((cov[(i, i)] / expected[(i, i)] - 1.0).abs() < 0.05);
        }
        assert!((cov[(0, 1)] - expected[(0, 1)]).abs() < 0.05 * expected[(0, 0)]);
    }

    #[test]
    fn transition_density_dirac_position() {
        let model = PlanarMotion {
            frame: OdometryFrame::Body,
        };
        let step = PlanarStep {
            odometry: PlanarOdometry {
                dp: Vector2::new(0.1, 0.0),
                dheading: 0.0,
            },
            noise: ProcessNoisePlanar::heading_only(0.01, 1.0),
        };
        let from = PosePlanar::new(0.0, 0.0, 0.0);
        let reachable = PosePlanar::new(0.1, 0.0, 0.05);
        let unreachable = PosePlanar::new(0.1 + 1e-6, 0.0, 0.05);
        let lp = model.transition_logpdf(&from, &step, &reachable);
        let expected = -0.5 * ((2.0 * PI * 0.01).ln() + 0.05f64.powi(2) / 0.01);
        assert!((lp - expected).abs() < 1e-12);
        assert_eq!(model.transition_logpdf(&from, &step, &unreachable), f64::NEG_INFINITY);
    }

    #[test]
    fn error_jacobian_matches_finite_differences() {
        let model = PlanarMotion {
            frame: OdometryFrame::Body,
        };
        let step = PlanarStep {
            odometry: PlanarOdometry {
                dp: Vector2::new(0.3, -0.2),
                dheading: 0.4,
            },
            noise: ProcessNoisePlanar::heading_only(0.01, 1.0),
        };
        let pose = PosePlanar::new(0.5, 1.0, 0.7);
        let (f, _) = model.error_jacobian(&pose, &step);
        let base = model.predict_mean(&pose, &step);
        let h = 1e-6;
        for k in 0..3 {
            let mut d = [0.0; 3];
            d[k] = h;
            let plus = model.predict_mean(&pose.retract(&d), &step);
            d[k] = -h;
            let minus = model.predict_mean(&pose.retract(&d), &step);
            let diff: Vec<f64> = base
                .local(&plus)
                .iter()
                .zip(base.local(&minus))
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect();
            for r in 0..3 {
                assert!((diff[r] - f[(r, k)]).abs() < 1e-8);
            }
        }

        let model = SpatialMotion;
        let step = SpatialStep {
            odometry: SpatialOdometry {
                dp: Vector3::new(0.1, 0.2, 0.0),
                dq: quat_exp(&Vector3::new(0.2, -0.1, 0.5)),
            },
            noise: ProcessNoise3D {
                qp: Matrix3::identity(),
                qq: Matrix3::identity(),
                dt: 1.0,
            },
        };
        let pose = Pose3D::new(Vector3::new(1.0, 0.0, 0.0), quat_exp(&Vector3::new(0.3, 0.1, -0.4)));
        let (f, _) = model.error_jacobian(&pose, &step);
        let base = model.predict_mean(&pose, &step);
        for k in 0..6 {
            let mut d = [0.0; 6];
            d[k] = h;
            let plus = model.predict_mean(&pose.retract(&d), &step);
            d[k] = -h;
            let minus = model.predict_mean(&pose.retract(&d), &step);
            let lp = base.local(&plus);
            let lm = base.local(&minus);
            for r in 0..6 {
                assert!(((lp[r] - lm[r]) / (2.0 * h) - f[(r, k)]).abs() < 1e-7);
            }
        }
    }
}
