//! Measurement models that are (conditionally, or after linearization)
//! linear in the map parameters: `y = C(x) θ + ε`.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{rot2, rot2_derivative, Pose3D, PoseLike, PosePlanar};
use crate::gpmap::{field_matrix, prior_belief, BasisDomain, GaussianMapBelief, KernelHyper, MapKind};
use crate::linalg::{sample_gaussian, skew, spd_cholesky};
use crate::Result;

/// A measurement expressed as a linear-Gaussian observation of `θ`:
/// `y ≈ C θ + ε`, `ε ~ N(0, Σ)`. For linearized models `y` is the
/// pseudo-measurement `y − h(θ₀) + C θ₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearizedObservation {
    pub c: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Measurement linearized jointly in the pose error state and the map, for
/// the EKF baselines.
#[derive(Clone, Debug, PartialEq)]
pub struct EkfObservation {
    /// `y − h(x̂, θ̂)`.
    pub residual: DVector<f64>,
    pub h_pose: DMatrix<f64>,
    pub h_map: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
}

/// Gaussian information that a batch of observations carries about `θ`,
/// expressed around a centre `θc`:
/// `Σ_τ log N(y_τ; C_τ θ, Σ) = −½ (θ−θc)ᵀ J (θ−θc) + bᵀ(θ−θc) − ½ c − ½ (n log 2π + Σ log|Σ|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoAccumulator {
    pub center: DVector<f64>,
    pub info: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub n_obs: usize,
    pub logdet_sigma: f64,
}

impl InfoAccumulator {
    pub fn new(center: DVector<f64>) -> Self {
        let n = center.len();
        InfoAccumulator {
            center,
            info: DMatrix::zeros(n, n),
            b: DVector::zeros(n),
            c: 0.0,
            n_obs: 0,
            logdet_sigma: 0.0,
        }
    }

    pub fn add(&mut self, obs: &LinearizedObservation) -> Result<()> {
        let chol = spd_cholesky(obs.sigma.clone())?;
        let l = chol.l_dirty();
        let w = l.solve_lower_triangular(&obs.c).expect("nonsingular noise factor");
        let r = &obs.y - &obs.c * &self.center;
        let rw = l.solve_lower_triangular(&r).expect("nonsingular noise factor");
        self.info.gemm_tr(1.0, &w, &w, 1.0);
        self.b.gemv_tr(1.0, &w, &rw, 1.0);
        self.c += rw.norm_squared();
        self.n_obs += obs.y.len();
        self.logdet_sigma += crate::linalg::chol_logdet(&chol);
        Ok(())
    }

    /// Adds one scalar observation `y = Σ_k v_k θ_{j_k} + ε`, `ε ~ N(0, var)`,
    /// given its residual at the centre.
    pub fn add_sparse_row(&mut self, entries: &[(usize, f64)], residual: f64, var: f64) {
        let s = 1.0 / var;
        for &(i, vi) in entries {
            self.b[i] += s * vi * residual;
            for &(j, vj) in entries {
                self.info[(i, j)] += s * vi * vj;
            }
        }
        self.c += s * residual * residual;
        self.n_obs += 1;
        self.logdet_sigma += var.ln();
    }

    /// Sum of two accumulators sharing a centre.
    pub fn merge(&mut self, other: &InfoAccumulator) {
        self.info += &other.info;
        self.b += &other.b;
        self.c += other.c;
        self.n_obs += other.n_obs;
        self.logdet_sigma += other.logdet_sigma;
    }
}

pub trait MeasurementModel: Send + Sync {
    type Pose: PoseLike;
    type Measurement: Clone + Debug + Send + Sync;

    fn map_dim(&self) -> usize;

    fn prior(&self) -> GaussianMapBelief;

    /// True when `C(x)` does not depend on the linearization point.
    fn is_exactly_linear(&self) -> bool;

    /// The observation of `θ` carried by `y` at `pose`, linearized about
    /// `lin` when the model is not exactly linear. `None` when nothing is
    /// observed.
    fn observe(&self, pose: &Self::Pose, lin: &DVector<f64>, y: &Self::Measurement) -> Option<LinearizedObservation>;

    /// Adds the information of `y` at `pose` (linearized about `lin`) to
    /// `acc`.
    fn accumulate_information(
        &self,
        pose: &Self::Pose,
        lin: &DVector<f64>,
        y: &Self::Measurement,
        acc: &mut InfoAccumulator,
    ) -> Result<()> {
        match self.observe(pose, lin, y) {
            Some(obs) => acc.add(&obs),
            None => Ok(()),
        }
    }

    /// Draws a measurement from the exact (nonlinear) model.
    fn simulate<R: Rng + ?Sized>(&self, pose: &Self::Pose, theta: &DVector<f64>, rng: &mut R) -> Self::Measurement;

    /// Joint pose/map linearization for the EKF baselines.
    fn ekf_observe(&self, pose: &Self::Pose, theta: &DVector<f64>, y: &Self::Measurement) -> Option<EkfObservation>;

    /// Flat representation for CSV export; missing entries are NaN.
    fn measurement_fields(&self, y: &Self::Measurement) -> Vec<f64>;
}

fn isotropic(n: usize, var: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal_element(n, n, var)
}

/// Scalar received-signal-strength fields, one independent map per access
/// point, all observed at the same position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadioModel {
    pub domain: BasisDomain,
    pub hyper: KernelHyper,
    pub access_points: usize,
}

impl RadioModel {
    pub fn new(domain: BasisDomain, hyper: KernelHyper) -> Self {
        RadioModel {
            domain,
            hyper,
            access_points: 1,
        }
    }

    /// `C(x) = I_{n_ap} ⊗ Φ(p)ᵀ`.
    pub fn c_matrix(&self, pose: &PosePlanar) -> DMatrix<f64> {
        let phi = self.domain.eval(pose.position.as_slice());
        let m = phi.len();
        let mut c = DMatrix::zeros(self.access_points, m * self.access_points);
        for a in 0..self.access_points {
            c.view_mut((a, a * m), (1, m)).copy_from(&phi.transpose());
        }
        c
    }
}

impl MeasurementModel for RadioModel {
    type Pose = PosePlanar;
    type Measurement = DVector<f64>;

    fn map_dim(&self) -> usize {
        self.domain.len() * self.access_points
    }

    fn prior(&self) -> GaussianMapBelief {
        let single = prior_belief(&self.domain, &self.hyper, MapKind::Radio);
        if self.access_points == 1 {
            return single;
        }
        let diag: Vec<f64> = (0..self.access_points)
            .flat_map(|_| single.cov.diagonal().iter().cloned().collect::<Vec<_>>())
            .collect();
        GaussianMapBelief {
            mean: DVector::zeros(diag.len()),
            cov: DMatrix::from_diagonal(&DVector::from_vec(diag)),
        }
    }

    fn is_exactly_linear(&self) -> bool {
        true
    }

    fn observe(&self, pose: &PosePlanar, _lin: &DVector<f64>, y: &DVector<f64>) -> Option<LinearizedObservation> {
        Some(LinearizedObservation {
            c: self.c_matrix(pose),
            y: y.clone(),
            sigma: isotropic(self.access_points, self.hyper.sigma_noise2),
        })
    }

    fn simulate<R: Rng + ?Sized>(&self, pose: &PosePlanar, theta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let sd = self.hyper.sigma_noise2.sqrt();
        let mut y = self.c_matrix(pose) * theta;
        for v in y.iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
        y
    }

    fn ekf_observe(&self, pose: &PosePlanar, theta: &DVector<f64>, y: &DVector<f64>) -> Option<EkfObservation> {
        let c = self.c_matrix(pose);
        let g = self.domain.grad(pose.position.as_slice());
        let m = self.domain.len();
        let mut h_pose = DMatrix::zeros(self.access_points, 3);
        for a in 0..self.access_points {
            let dp = &g * theta.rows(a * m, m);
            h_pose[(a, 0)] = dp[0];
            h_pose[(a, 1)] = dp[1];
        }
        Some(EkfObservation {
            residual: y - &c * theta,
            h_pose,
            h_map: c,
            sigma: isotropic(self.access_points, self.hyper.sigma_noise2),
        })
    }

    fn measurement_fields(&self, y: &DVector<f64>) -> Vec<f64> {
        y.iter().cloned().collect()
    }
}

/// Three-axis magnetometer observing a curl-free field: the gradient of a
/// linear potential (the uniform background field) plus a reduced-rank SE
/// potential. The parameter vector is `[θ_lin (3); θ_SE (m)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagneticModel {
    pub domain: BasisDomain,
    pub hyper: KernelHyper,
}

impl MagneticModel {
    /// `C = R(q^bn) [I₃ | ∇Φ(p)]`.
    pub fn c_matrix(&self, pose: &Pose3D) -> DMatrix<f64> {
        let rt = pose.rotation_nb().transpose();
        let nav = field_matrix(&self.domain, pose.position.as_slice(), MapKind::Magnetic);
        let rt = DMatrix::from_column_slice(3, 3, rt.as_slice());
        rt * nav
    }

    /// Navigation-frame field at `p`.
    pub fn field(&self, p: &Vector3<f64>, theta: &DVector<f64>) -> Vector3<f64> {
        let nav = field_matrix(&self.domain, p.as_slice(), MapKind::Magnetic);
        let f = nav * theta;
        Vector3::new(f[0], f[1], f[2])
    }
}

impl MeasurementModel for MagneticModel {
    type Pose = Pose3D;
    type Measurement = DVector<f64>;

    fn map_dim(&self) -> usize {
        self.domain.len() + 3
    }

    fn prior(&self) -> GaussianMapBelief {
        prior_belief(&self.domain, &self.hyper, MapKind::Magnetic)
    }

    fn is_exactly_linear(&self) -> bool {
        true
    }

    fn observe(&self, pose: &Pose3D, _lin: &DVector<f64>, y: &DVector<f64>) -> Option<LinearizedObservation> {
        Some(LinearizedObservation {
            c: self.c_matrix(pose),
            y: y.clone(),
            sigma: isotropic(3, self.hyper.sigma_noise2),
        })
    }

    fn simulate<R: Rng + ?Sized>(&self, pose: &Pose3D, theta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let sd = self.hyper.sigma_noise2.sqrt();
        let mut y = self.c_matrix(pose) * theta;
        for v in y.iter_mut() {
            *v += sd * rng.sample::<f64, _>(StandardNormal);
        }
        y
    }

    fn ekf_observe(&self, pose: &Pose3D, theta: &DVector<f64>, y: &DVector<f64>) -> Option<EkfObservation> {
        let c = self.c_matrix(pose);
        let rt = pose.rotation_nb().transpose();
        let f_nav = self.field(&pose.position, theta);
        let hess = self
            .domain
            .weighted_hessian(pose.position.as_slice(), &theta.as_slice()[3..]);
        let hess = Matrix3::from_column_slice(hess.as_slice());
        let dp = rt * hess;
        let dphi = skew(&(rt * f_nav));
        let mut h_pose = DMatrix::zeros(3, 6);
        h_pose.view_mut((0, 0), (3, 3)).copy_from(&dp);
        h_pose.view_mut((0, 3), (3, 3)).copy_from(&dphi);
        Some(EkfObservation {
            residual: y - &c * theta,
            h_pose,
            h_map: c,
            sigma: isotropic(3, self.hyper.sigma_noise2),
        })
    }

    fn measurement_fields(&self, y: &DVector<f64>) -> Vec<f64> {
        y.iter().cloned().collect()
    }
}

/// One-dimensional pinhole camera in the plane. The camera frame is the
/// body frame; its second axis is the optical axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Camera {
    pub f: f64,
    pub c: f64,
    /// Landmarks closer than this along the optical axis are not visible.
    pub depth_min: f64,
    /// Largest visible `|pixel − c|`; `f · tan(half_fov)`.
    pub half_width: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            f: 1.5,
            c: 0.0,
            depth_min: 0.1,
            half_width: 1.0,
        }
    }
}

/// Linearization points closer than this along the optical axis are skipped,
/// as are points closer than the camera's `depth_min`.
pub const LINEARIZATION_MIN_DEPTH: f64 = 1e-6;

impl Camera {
    pub fn full_fov(&self) -> f64 {
        2.0 * (self.half_width / self.f).atan()
    }

    /// Landmark position in camera coordinates.
    pub fn camera_coords(pose: &PosePlanar, landmark: &Vector2<f64>) -> Vector2<f64> {
        rot2(pose.heading).transpose() * (landmark - pose.position)
    }

    /// `(pixel, depth)`; the pixel is NaN at zero depth.
    pub fn project(&self, pose: &PosePlanar, landmark: &Vector2<f64>) -> (f64, f64) {
        let cc = Self::camera_coords(pose, landmark);
        let pixel = if cc.y != 0.0 { self.f * cc.x / cc.y + self.c } else { f64::NAN };
        (pixel, cc.y)
    }

    pub fn visible(&self, pixel: f64, depth: f64) -> bool {
        depth > self.depth_min && (pixel - self.c).abs() <= self.half_width
    }

    fn min_linearization_depth(&self) -> f64 {
        self.depth_min.max(LINEARIZATION_MIN_DEPTH)
    }

    /// Gradient of the pixel with respect to the landmark position.
    pub fn landmark_jacobian(&self, pose: &PosePlanar, landmark: &Vector2<f64>) -> Option<Vector2<f64>> {
        let cc = Self::camera_coords(pose, landmark);
        if cc.y <= self.min_linearization_depth() {
            return None;
        }
        let dpix_dc = Vector2::new(self.f / cc.y, -self.f * cc.x / (cc.y * cc.y));
        // ∂c/∂p_j = Rᵀ, so the gradient is R · dpix_dc
        Some(rot2(pose.heading) * dpix_dc)
    }
}

/// Pixel observations of the planar landmarks; `None` for landmarks not seen.
pub type VisualMeasurement = Vec<Option<f64>>;

/// Sparse landmark map observed through [`Camera`]; `θ` stacks the `L`
/// landmark positions. The measurement is linearized about each belief's
/// current landmark means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visual2dModel {
    pub camera: Camera,
    pub landmarks: usize,
    pub sigma_v2: f64,
    pub prior_mean: DVector<f64>,
    pub prior_var: f64,
}

impl Visual2dModel {
    fn landmark(theta: &DVector<f64>, j: usize) -> Vector2<f64> {
        Vector2::new(theta[2 * j], theta[2 * j + 1])
    }

    /// Linearized observation at `pose` of the landmarks in `visible`, with
    /// the predicted pixels `h(lin)`. Landmarks whose linearization point
    /// sits at non-positive depth are dropped; the count is returned.
    pub fn linearize(
        &self,
        pose: &PosePlanar,
        lin: &DVector<f64>,
        visible: &[usize],
    ) -> (DMatrix<f64>, DVector<f64>, Vec<usize>, usize) {
        let mut rows = Vec::with_capacity(visible.len());
        let mut skipped = 0;
        for &j in visible {
            let lm = Self::landmark(lin, j);
            match self.camera.landmark_jacobian(pose, &lm) {
                Some(g) => rows.push((j, g, self.camera.project(pose, &lm).0)),
                None => skipped += 1,
            }
        }
        let mut c = DMatrix::zeros(rows.len(), 2 * self.landmarks);
        let mut pred = DVector::zeros(rows.len());
        let mut used = Vec::with_capacity(rows.len());
        for (r, (j, g, pix)) in rows.into_iter().enumerate() {
            c[(r, 2 * j)] = g.x;
            c[(r, 2 * j + 1)] = g.y;
            pred[r] = pix;
            used.push(j);
        }
        (c, pred, used, skipped)
    }

    /// Jacobian of the pixel of `landmark` with respect to the pose error
    /// state `(δp, δh)`.
    pub fn pose_jacobian(&self, pose: &PosePlanar, landmark: &Vector2<f64>) -> Option<[f64; 3]> {
        let cc = Camera::camera_coords(pose, landmark);
        if cc.y <= self.camera.min_linearization_depth() {
            return None;
        }
        let f = self.camera.f;
        let dpix_dc = Vector2::new(f / cc.y, -f * cc.x / (cc.y * cc.y));
        let rt: Matrix2<f64> = rot2(pose.heading).transpose();
        let dp = -(rt.transpose() * dpix_dc);
        let dh = dpix_dc.dot(&(rot2_derivative(pose.heading).transpose() * (landmark - pose.position)));
        Some([dp.x, dp.y, dh])
    }
}

impl MeasurementModel for Visual2dModel {
    type Pose = PosePlanar;
    type Measurement = VisualMeasurement;

    fn map_dim(&self) -> usize {
        2 * self.landmarks
    }

    fn prior(&self) -> GaussianMapBelief {
        let n = self.map_dim();
        GaussianMapBelief {
            mean: self.prior_mean.clone(),
            cov: DMatrix::from_diagonal_element(n, n, self.prior_var),
        }
    }

    fn is_exactly_linear(&self) -> bool {
        false
    }

    fn observe(&self, pose: &PosePlanar, lin: &DVector<f64>, y: &VisualMeasurement) -> Option<LinearizedObservation> {
        let visible: Vec<usize> = (0..self.landmarks).filter(|&j| y[j].is_some()).collect();
        let (c, pred, used, _) = self.linearize(pose, lin, &visible);
        if used.is_empty() {
            return None;
        }
        let obs: DVector<f64> = DVector::from_iterator(used.len(), used.iter().map(|&j| y[j].unwrap()));
        let pseudo = obs - pred + &c * lin;
        Some(LinearizedObservation {
            c,
            y: pseudo,
            sigma: isotropic(used.len(), self.sigma_v2),
        })
    }

    fn accumulate_information(
        &self,
        pose: &PosePlanar,
        lin: &DVector<f64>,
        y: &VisualMeasurement,
        acc: &mut InfoAccumulator,
    ) -> Result<()> {
        for (j, pix) in y.iter().enumerate() {
            let Some(pix) = pix else { continue };
            let lm = Self::landmark(lin, j);
            let Some(g) = self.camera.landmark_jacobian(pose, &lm) else { continue };
            let pred = self.camera.project(pose, &lm).0;
            // residual of the pseudo-measurement at the accumulator centre
            let d = Vector2::new(lin[2 * j] - acc.center[2 * j], lin[2 * j + 1] - acc.center[2 * j + 1]);
            let residual = pix - pred + g.dot(&d);
            acc.add_sparse_row(&[(2 * j, g.x), (2 * j + 1, g.y)], residual, self.sigma_v2);
        }
        Ok(())
    }

    fn simulate<R: Rng + ?Sized>(&self, pose: &PosePlanar, theta: &DVector<f64>, rng: &mut R) -> VisualMeasurement {
        let sd = self.sigma_v2.sqrt();
        (0..self.landmarks)
            .map(|j| {
                let (pix, depth) = self.camera.project(pose, &Self::landmark(theta, j));
                let noise: f64 = rng.sample(StandardNormal);
                self.camera.visible(pix, depth).then(|| pix + sd * noise)
            })
            .collect()
    }

    fn ekf_observe(&self, pose: &PosePlanar, theta: &DVector<f64>, y: &VisualMeasurement) -> Option<EkfObservation> {
        let visible: Vec<usize> = (0..self.landmarks).filter(|&j| y[j].is_some()).collect();
        let (c, pred, used, _) = self.linearize(pose, theta, &visible);
        if used.is_empty() {
            return None;
        }
        let mut h_pose = DMatrix::zeros(used.len(), 3);
        for (r, &j) in used.iter().enumerate() {
            let jac = self.pose_jacobian(pose, &Self::landmark(theta, j))?;
            for k in 0..3 {
                h_pose[(r, k)] = jac[k];
            }
        }
        let obs = DVector::from_iterator(used.len(), used.iter().map(|&j| y[j].unwrap()));
        Some(EkfObservation {
            residual: obs - pred,
            h_pose,
            h_map: c,
            sigma: isotropic(used.len(), self.sigma_v2),
        })
    }

    fn measurement_fields(&self, y: &VisualMeasurement) -> Vec<f64> {
        y.iter().map(|v| v.unwrap_or(f64::NAN)).collect()
    }
}

/// Draws a map from the model's prior.
pub fn sample_prior<M: MeasurementModel, R: Rng + ?Sized>(model: &M, rng: &mut R) -> DVector<f64> {
    let p = model.prior();
    sample_gaussian(&p.mean, &p.cov, rng)
}
