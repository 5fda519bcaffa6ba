use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rbslam_core::evaluation::{aligned_rmse, procrustes_align, rmse};
use rbslam_core::geometry::{propagate_3d, quat_exp, quat_log, ProcessNoise3D, SpatialOdometry};
use rbslam_core::gpmap::GaussianMapBelief;
use rbslam_core::inference::systematic_resample;
use rbslam_core::linalg::normalize_log_weights;
use rbslam_core::Pose3D;

fn min_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.min()
}

fn belief_case() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = 5;
    let p = 2;
    (
        prop::collection::vec(-2.0..2.0f64, n * n).prop_map(move |v| DMatrix::from_vec(n, n, v)),
        prop::collection::vec(-3.0..3.0f64, p * n).prop_map(move |v| DMatrix::from_vec(p, n, v)),
        prop::collection::vec(1e-3..1.0f64, p),
        prop::collection::vec(-5.0..5.0f64, p),
        prop::collection::vec(-1.0..1.0f64, n),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn map_update_keeps_covariance_psd_and_shrinks_it((a, c, noise, y, mean) in belief_case()) {
        let n = a.nrows();
        let cov = &a * a.transpose() + DMatrix::identity(n, n) * 1e-3;
        let mut belief = GaussianMapBelief::new(DVector::from_vec(mean), cov.clone()).unwrap();
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(noise));
        let y = DVector::from_vec(y);
        for _ in 0..3 {
            belief.update(&c, &sigma, &y).unwrap();
            let p = &belief.cov;
            prop_assert!((p - p.transpose()).amax() <= 1e-12 * (1.0 + p.amax()));
            prop_assert!(min_eig(p) >= -1e-9 * (1.0 + p.amax()));
        }
        // conditioning never adds uncertainty in any direction
        prop_assert!(min_eig(&(&cov - &belief.cov)) >= -1e-8 * (1.0 + cov.amax()));
    }

    #[test]
    fn normalized_weights_sum_to_one(lw in prop::collection::vec(-800.0..50.0f64, 1..64), shift in -1e3..1e3f64) {
        let w = normalize_log_weights(&lw).unwrap();
        prop_assert!(w.iter().all(|v| *v >= 0.0 && v.is_finite()));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let shifted: Vec<f64> = lw.iter().map(|v| v + shift).collect();
        let w2 = normalize_log_weights(&shifted).unwrap();
        for (a, b) in w.iter().zip(&w2) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn systematic_resample_counts_stay_within_one(
        weights in prop::collection::vec(0.0..1.0f64, 1..40),
        n in 1usize..200,
        seed in any::<u64>(),
    ) {
        prop_assume!(weights.iter().sum::<f64>() > 1e-6);
        let total: f64 = weights.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = systematic_resample(&weights, n, &mut rng).unwrap();
        prop_assert_eq!(idx.len(), n);
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
        for (i, w) in weights.iter().enumerate() {
            let count = idx.iter().filter(|&&j| j == i).count() as f64;
            prop_assert!((count - n as f64 * w / total).abs() < 1.0 + 1e-9);
            if *w == 0.0 {
                prop_assert_eq!(count, 0.0);
            }
        }
    }

    #[test]
    fn propagated_orientation_stays_unit(
        rot in prop::collection::vec(-0.5..0.5f64, 3),
        q_std in 0.0..0.5f64,
        seed in any::<u64>(),
    ) {
        let odo = SpatialOdometry {
            dp: Vector3::new(0.1, 0.0, 0.0),
            dq: quat_exp(&Vector3::new(rot[0], rot[1], rot[2])),
        };
        let noise = ProcessNoise3D {
            qp: Matrix3::identity() * 0.01,
            qq: Matrix3::identity() * q_std * q_std,
            dt: 0.1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pose = Pose3D::new(Vector3::zeros(), UnitQuaternion::identity());
        for _ in 0..500 {
            pose = propagate_3d(&pose, &odo, &noise, &mut rng);
        }
        prop_assert!((pose.orientation.quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quat_log_inverts_exp(v in prop::collection::vec(-1.7..1.7f64, 3)) {
        let v = Vector3::new(v[0], v[1], v[2]);
        prop_assume!(v.norm() < 3.0);
        prop_assert!((quat_log(&quat_exp(&v)) - v).amax() < 1e-10);
    }

    #[test]
    fn procrustes_undoes_a_similarity(
        pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..30),
        angle in -3.1..3.1f64,
        scale in 0.2..5.0f64,
        tx in -20.0..20.0f64,
        ty in -20.0..20.0f64,
    ) {
        let truth: Vec<Vec<f64>> = pts.iter().map(|(x, y)| vec![*x, *y]).collect();
        let spread = truth.iter().map(|p| (p[0] - truth[0][0]).abs() + (p[1] - truth[0][1]).abs()).fold(0.0, f64::max);
        prop_assume!(spread > 1e-2);
        let (s, c) = angle.sin_cos();
        let moved: Vec<Vec<f64>> = truth
            .iter()
            .map(|p| vec![scale * (c * p[0] - s * p[1]) + tx, scale * (s * p[0] + c * p[1]) + ty])
            .collect();
        prop_assert!(aligned_rmse(&moved, &truth).unwrap() < 1e-8 * (1.0 + 10.0 * scale));
        let sim = procrustes_align(&moved, &truth, true).unwrap();
        prop_assert!((sim.scale * scale - 1.0).abs() < 1e-8);
        prop_assert!((sim.rotation.determinant() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rmse_ignores_order_of_matched_pairs(
        pairs in prop::collection::vec(((-5.0..5.0f64, -5.0..5.0f64), (-5.0..5.0f64, -5.0..5.0f64)), 1..50),
        seed in any::<u64>(),
    ) {
        let est: Vec<Vec<f64>> = pairs.iter().map(|(a, _)| vec![a.0, a.1]).collect();
        let tru: Vec<Vec<f64>> = pairs.iter().map(|(_, b)| vec![b.0, b.1]).collect();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        let est2: Vec<Vec<f64>> = order.iter().map(|&i| est[i].clone()).collect();
        let tru2: Vec<Vec<f64>> = order.iter().map(|&i| tru[i].clone()).collect();
        let a = rmse(&est, &tru).unwrap();
        let b = rmse(&est2, &tru2).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
        prop_assert!(a >= 0.0);
    }
}
