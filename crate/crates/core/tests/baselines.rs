use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use rbslam_core::baselines::{ekf_slam_run, eks_smooth};
use rbslam_core::geometry::{MotionModel, OdometryFrame, PlanarMotion, PlanarOdometry, PlanarStep, PosePlanar, ProcessNoisePlanar};
use rbslam_core::gpmap::GaussianMapBelief;
use rbslam_core::rng::{substream, Stream};
use rbslam_core::sensors::{EkfObservation, LinearizedObservation, MeasurementModel};

/// `y = A x + B θ + ε` with pose `x = (px, py, h)` and `θ ∈ R²`.
struct LinearBeacon;

const NOISE: f64 = 0.05;

fn a_mat() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
}

fn b_mat() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, -1.0])
}

fn pose_vec(x: &PosePlanar) -> DVector<f64> {
    DVector::from_vec(vec![x.position.x, x.position.y, x.heading])
}

impl MeasurementModel for LinearBeacon {
    type Pose = PosePlanar;
    type Measurement = DVector<f64>;

    fn map_dim(&self) -> usize {
        2
    }

    fn prior(&self) -> GaussianMapBelief {
        GaussianMapBelief::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap()
    }

    fn is_exactly_linear(&self) -> bool {
        true
    }

    fn observe(&self, pose: &PosePlanar, _lin: &DVector<f64>, y: &DVector<f64>) -> Option<LinearizedObservation> {
        Some(LinearizedObservation {
            c: b_mat(),
            y: y - a_mat() * pose_vec(pose),
            sigma: DMatrix::identity(3, 3) * NOISE,
        })
    }

    fn simulate<R: Rng + ?Sized>(&self, pose: &PosePlanar, theta: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        a_mat() * pose_vec(pose) + b_mat() * theta + DVector::from_fn(3, |_, _| NOISE.sqrt() * rng.sample::<f64, _>(StandardNormal))
    }

    fn ekf_observe(&self, pose: &PosePlanar, theta: &DVector<f64>, y: &DVector<f64>) -> Option<EkfObservation> {
        Some(EkfObservation {
            residual: y - a_mat() * pose_vec(pose) - b_mat() * theta,
            h_pose: a_mat(),
            h_map: b_mat(),
            sigma: DMatrix::identity(3, 3) * NOISE,
        })
    }

    fn measurement_fields(&self, y: &DVector<f64>) -> Vec<f64> {
        y.iter().cloned().collect()
    }
}

/// Dense posterior over `(x_1, …, x_{T−1}, θ)` by accumulating the normal
/// equations of every Gaussian factor.
fn batch_posterior(x0: &PosePlanar, inputs: &[PlanarStep], ys: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
    let t_len = ys.len();
    let n = 3 * (t_len - 1) + 2;
    let th = 3 * (t_len - 1);
    let mut info = DMatrix::<f64>::zeros(n, n);
    let mut eta = DVector::<f64>::zeros(n);
    // factor r = J z − k with covariance R
    let mut add = |j: DMatrix<f64>, k: DVector<f64>, r: DMatrix<f64>| {
        let ri = r.try_inverse().unwrap();
        info += j.transpose() * &ri * &j;
        eta += j.transpose() * &ri * k;
    };
    add(
        {
            let mut j = DMatrix::zeros(2, n);
            j.view_mut((0, th), (2, 2)).fill_with_identity();
            j
        },
        DVector::zeros(2),
        DMatrix::identity(2, 2),
    );
    let x0v = pose_vec(x0);
    for t in 1..t_len {
        let u = &inputs[t - 1];
        let q = DMatrix::from_diagonal(&DVector::from_vec(vec![
            u.noise.qp[(0, 0)] * u.noise.dt,
            u.noise.qp[(1, 1)] * u.noise.dt,
            u.noise.qq * u.noise.dt,
        ]));
        let du = DVector::from_vec(vec![u.odometry.dp.x, u.odometry.dp.y, u.odometry.dheading]);
        let mut j = DMatrix::zeros(3, n);
        j.view_mut((0, 3 * (t - 1)), (3, 3)).fill_with_identity();
        let k = if t == 1 {
            du + &x0v
        } else {
            j.view_mut((0, 3 * (t - 2)), (3, 3)).copy_from(&(-DMatrix::identity(3, 3)));
            du
        };
        add(j, k, q);
    }
    for (t, y) in ys.iter().enumerate() {
        let mut j = DMatrix::zeros(3, n);
        j.view_mut((0, th), (3, 2)).copy_from(&b_mat());
        let k = if t == 0 {
            y - a_mat() * &x0v
        } else {
            j.view_mut((0, 3 * (t - 1)), (3, 3)).copy_from(&a_mat());
            y.clone()
        };
        add(j, k, DMatrix::identity(3, 3) * NOISE);
    }
    let cov = info.try_inverse().unwrap();
    (&cov * eta, cov)
}

#[test]
fn eks_matches_batch_posterior_on_linear_gaussian_toy() {
    let dynamics = PlanarMotion {
        frame: OdometryFrame::Navigation,
    };
    let model = LinearBeacon;
    let mut rng = substream(2, Stream::Simulation, 0, 0, 0);
    let theta = DVector::from_vec(vec![0.7, -0.4]);
    let x0 = PosePlanar::new(0.0, 0.0, 0.0);
    let inputs: Vec<PlanarStep> = (0..12)
        .map(|t| PlanarStep {
            odometry: PlanarOdometry {
                dp: Vector2::new(0.1, 0.02 * t as f64),
                dheading: 0.01,
            },
            noise: ProcessNoisePlanar {
                qp: Matrix2::new(0.01, 0.0, 0.0, 0.02),
                qq: 0.003,
                dt: 1.0,
            },
        })
        .collect();
    let mut x = x0;
    let mut ys = vec![model.simulate(&x, &theta, &mut rng)];
    for u in &inputs {
        x = dynamics.propagate(&x, u, &mut rng);
        ys.push(model.simulate(&x, &theta, &mut rng));
    }
    let ekf = ekf_slam_run(&dynamics, &model, &inputs, &ys, x0).unwrap();
    let smoothed = eks_smooth(&ekf).unwrap();
    let (mean, cov) = batch_posterior(&x0, &inputs, &ys);
    let th = 3 * (ys.len() - 1);
    for t in 1..ys.len() {
        let s = &smoothed[t];
        let m = mean.rows(3 * (t - 1), 3);
        assert!((pose_vec(&s.pose) - m).amax() < 1e-8, "mean at {t}");
        let c = cov.view((3 * (t - 1), 3 * (t - 1)), (3, 3));
        assert!((s.pose_cov() - c).amax() < 1e-8, "cov at {t}");
    }
    assert!((&smoothed[0].theta - mean.rows(th, 2)).amax() < 1e-8);
    assert!((smoothed[0].map_cov() - cov.view((th, th), (2, 2))).amax() < 1e-8);
    // the final filtered map marginal is already the smoothed one
    assert!((&ekf.filtered.last().unwrap().theta - mean.rows(th, 2)).amax() < 1e-8);
}
