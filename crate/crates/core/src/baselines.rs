//! Extended Kalman filter and Rauch-Tung-Striebel smoother over the joint
//! error state `[pose; θ]`.

use nalgebra::{DMatrix, DVector};

use crate::geometry::{MotionModel, PoseLike};
use crate::linalg::{spd_cholesky, symmetrize};
use crate::sensors::MeasurementModel;
use crate::{Error, Result};

/// Nominal pose, map mean and joint error-state covariance.
#[derive(Clone, Debug)]
pub struct EkfState<P> {
    pub pose: P,
    pub theta: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl<P: PoseLike> EkfState<P> {
    pub fn pose_cov(&self) -> DMatrix<f64> {
        self.cov.view((0, 0), (P::DOF, P::DOF)).into_owned()
    }

    pub fn map_cov(&self) -> DMatrix<f64> {
        let n = self.theta.len();
        self.cov.view((P::DOF, P::DOF), (n, n)).into_owned()
    }
}

#[derive(Clone, Debug)]
pub struct EkfOutput<P> {
    /// Posterior after the measurement at each step.
    pub filtered: Vec<EkfState<P>>,
    /// Prior before the measurement at each step; entry 0 is the initial state.
    pub predicted: Vec<EkfState<P>>,
    /// Error-state Jacobian of the transition into step `t + 1`.
    pub jacobians: Vec<DMatrix<f64>>,
}

impl<P: PoseLike> EkfOutput<P> {
    pub fn trajectory(&self) -> Vec<P> {
        self.filtered.iter().map(|s| s.pose).collect()
    }
}

fn ekf_update<P: PoseLike, M: MeasurementModel<Pose = P>>(
    model: &M,
    state: &mut EkfState<P>,
    y: &M::Measurement,
) -> Result<()> {
    let Some(obs) = model.ekf_observe(&state.pose, &state.theta, y) else {
        return Ok(());
    };
    let d = P::DOF;
    let n = state.cov.nrows();
    let mut h = DMatrix::zeros(obs.residual.len(), n);
    h.view_mut((0, 0), (h.nrows(), d)).copy_from(&obs.h_pose);
    h.view_mut((0, d), (h.nrows(), n - d)).copy_from(&obs.h_map);
    let pht = &state.cov * h.transpose();
    let s = &h * &pht + &obs.sigma;
    let chol = spd_cholesky(s)?;
    let delta = &pht * chol.solve(&obs.residual);
    state.cov -= &pht * chol.solve(&pht.transpose());
    symmetrize(&mut state.cov);
    state.pose = state.pose.retract(&delta.as_slice()[..d]);
    state.theta += delta.rows(d, n - d);
    Ok(())
}

/// EKF-SLAM with the pose known exactly at the first step.
pub fn ekf_slam_run<D, M>(
    dynamics: &D,
    model: &M,
    inputs: &[D::Input],
    measurements: &[M::Measurement],
    x0: D::Pose,
) -> Result<EkfOutput<D::Pose>>
where
    D: MotionModel,
    M: MeasurementModel<Pose = D::Pose>,
{
    if inputs.len() + 1 != measurements.len() {
        return Err(Error::LengthMismatch {
            left: inputs.len() + 1,
            right: measurements.len(),
        });
    }
    let d = D::Pose::DOF;
    let prior = model.prior();
    let n = d + prior.dim();
    let mut cov = DMatrix::zeros(n, n);
    cov.view_mut((d, d), (n - d, n - d)).copy_from(&prior.cov);
    let mut state = EkfState {
        pose: x0,
        theta: prior.mean,
        cov,
    };
    let mut out = EkfOutput {
        filtered: Vec::with_capacity(measurements.len()),
        predicted: Vec::with_capacity(measurements.len()),
        jacobians: Vec::with_capacity(inputs.len()),
    };
    for (t, y) in measurements.iter().enumerate() {
        if t > 0 {
            let u = &inputs[t - 1];
            let (fp, qd) = dynamics.error_jacobian(&state.pose, u);
            let mut f = DMatrix::identity(n, n);
            f.view_mut((0, 0), (d, d)).copy_from(&fp);
            let mut cov = &f * &state.cov * f.transpose();
            let mut block = cov.view_mut((0, 0), (d, d));
            block += &qd;
            symmetrize(&mut cov);
            state.pose = dynamics.predict_mean(&state.pose, u);
            state.cov = cov;
            out.jacobians.push(f);
        }
        out.predicted.push(state.clone());
        ekf_update(model, &mut state, y).map_err(|e| e.at_step(t))?;
        out.filtered.push(state.clone());
    }
    Ok(out)
}

/// Solve `A X = B` for a symmetric PSD `A`, falling back to the
/// pseudo-inverse when `A` is singular (e.g. noiseless state components).
fn psd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Ok(chol) = spd_cholesky(a.clone()) {
        return Ok(chol.solve(b));
    }
    let pinv = a
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-12 * a.norm().max(f64::MIN_POSITIVE))
        .map_err(|_| Error::NotPositiveDefinite("predicted covariance"))?;
    Ok(pinv * b)
}

/// Rauch-Tung-Striebel smoothing of an EKF pass.
pub fn eks_smooth<P: PoseLike>(ekf: &EkfOutput<P>) -> Result<Vec<EkfState<P>>> {
    let t_len = ekf.filtered.len();
    let d = P::DOF;
    let mut out = ekf.filtered.clone();
    for t in (0..t_len.saturating_sub(1)).rev() {
        let filt = &ekf.filtered[t];
        let pred = &ekf.predicted[t + 1];
        let f = &ekf.jacobians[t];
        // G = P_f Fᵀ P_p⁻¹
        let g = psd_solve(&pred.cov, &(f * &filt.cov))
            .map_err(|e| e.at_step(t))?
            .transpose();
        let next = &out[t + 1];
        let mut diff = DVector::from_vec(pred.pose.local(&next.pose));
        diff = DVector::from_iterator(
            diff.len() + next.theta.len(),
            diff.iter().cloned().chain((&next.theta - &pred.theta).iter().cloned()),
        );
        let delta = &g * diff;
        let mut cov = &filt.cov + &g * (&next.cov - &pred.cov) * g.transpose();
        symmetrize(&mut cov);
        let n = cov.nrows();
        out[t] = EkfState {
            pose: filt.pose.retract(&delta.as_slice()[..d]),
            theta: &filt.theta + delta.rows(d, n - d),
            cov,
        };
    }
    Ok(out)
}
