//! Error metrics, alignment and Monte Carlo summaries.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::geometry::PoseLike;
use crate::inference::Genealogy;
use crate::{Error, Result};

/// Root-mean-square Euclidean position error over time.
pub fn rmse(estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: estimate.len(),
            right: truth.len(),
        });
    }
    if estimate.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let mut acc = 0.0;
    for (e, t) in estimate.iter().zip(truth) {
        if e.len() != t.len() {
            return Err(Error::Dimension(format!("point dims {} vs {}", e.len(), t.len())));
        }
        acc += e.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok((acc / estimate.len() as f64).sqrt())
}

pub fn positions<P: PoseLike>(poses: &[P]) -> Vec<Vec<f64>> {
    poses.iter().map(|p| p.position_slice().to_vec()).collect()
}

pub fn pose_rmse<P: PoseLike>(estimate: &[P], truth: &[P]) -> Result<f64> {
    rmse(&positions(estimate), &positions(truth))
}

/// Similarity transform `x ↦ s R x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
}

impl Similarity {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(x);
        (self.scale * &self.rotation * v + &self.translation).iter().cloned().collect()
    }

    pub fn apply_all(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| self.apply(x)).collect()
    }
}

fn to_matrix(points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = points.first().map_or(0, |p| p.len());
    if d == 0 {
        return Err(Error::DegeneratePoints("empty point set"));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Dimension("ragged point set".into()));
    }
    Ok(DMatrix::from_fn(d, points.len(), |i, j| points[j][i]))
}

/// Least-squares similarity (or rigid, without scale) transform mapping
/// `source` onto `target` (Umeyama).
pub fn procrustes_align(source: &[Vec<f64>], target: &[Vec<f64>], with_scale: bool) -> Result<Similarity> {
    if source.len() != target.len() {
        return Err(Error::LengthMismatch {
            left: source.len(),
            right: target.len(),
        });
    }
    let x = to_matrix(source)?;
    let y = to_matrix(target)?;
    if x.nrows() != y.nrows() {
        return Err(Error::Dimension("source and target dims differ".into()));
    }
    let n = x.ncols() as f64;
    let d = x.nrows();
    let mx = x.column_mean();
    let my = y.column_mean();
    let xc = DMatrix::from_fn(d, x.ncols(), |i, j| x[(i, j)] - mx[i]);
    let yc = DMatrix::from_fn(d, y.ncols(), |i, j| y[(i, j)] - my[i]);
    let var_x = xc.norm_squared() / n;
    if var_x < 1e-24 {
        return Err(Error::DegeneratePoints("source points coincide"));
    }
    let cov = &yc * xc.transpose() / n;
    let svd = cov.svd(true, true);
    let u = svd.u.ok_or(Error::DegeneratePoints("svd failed"))?;
    let vt = svd.v_t.ok_or(Error::DegeneratePoints("svd failed"))?;
    let mut sign = DVector::from_element(d, 1.0);
    if (u.determinant() * vt.determinant()) < 0.0 {
        sign[d - 1] = -1.0;
    }
    let rotation = &u * DMatrix::from_diagonal(&sign) * &vt;
    let scale = if with_scale {
        svd.singular_values.dot(&sign) / var_x
    } else {
        1.0
    };
    let translation = &my - scale * &rotation * &mx;
    Ok(Similarity {
        scale,
        rotation,
        translation,
    })
}

/// RMSE after similarity alignment of the estimate onto the truth.
pub fn aligned_rmse(estimate: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    let sim = procrustes_align(estimate, truth, true)?;
    rmse(&sim.apply_all(estimate), truth)
}

/// Trajectory RMSE after the similarity that maps the estimated landmarks
/// onto the true ones. Landmarks are stacked `[x₁, y₁, x₂, y₂, …]`.
pub fn landmark_aligned_rmse(
    trajectory: &[Vec<f64>],
    truth: &[Vec<f64>],
    landmarks: &[f64],
    true_landmarks: &[f64],
) -> Result<f64> {
    let pts = |v: &[f64]| v.chunks(2).map(|c| c.to_vec()).collect::<Vec<_>>();
    let sim = procrustes_align(&pts(landmarks), &pts(true_landmarks), true)?;
    rmse(&sim.apply_all(trajectory), truth)
}

/// For each step `t`, the number of distinct particles at `t` that are
/// ancestors of the final particle set.
pub fn unique_ancestor_profile<P>(genealogy: &Genealogy<P>) -> Vec<usize> {
    let t_len = genealogy.poses.len();
    let mut out = vec![0; t_len];
    if t_len == 0 {
        return out;
    }
    let mut alive: HashSet<usize> = (0..genealogy.poses[t_len - 1].len()).collect();
    for t in (0..t_len).rev() {
        out[t] = alive.len();
        if t > 0 {
            alive = alive.iter().map(|&i| genealogy.ancestors[t][i]).collect();
        }
    }
    out
}

/// Tukey box-plot summary with type-7 quartiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub mean: f64,
    pub outliers: Vec<f64>,
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mc_aggregate(values: &[f64]) -> Result<BoxStats> {
    let mut v: Vec<f64> = values.iter().cloned().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return Err(Error::InvalidArgument("no finite values".into()));
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().cloned().filter(|&x| x >= lo && x <= hi).collect();
    Ok(BoxStats {
        n: v.len(),
        median: quantile_sorted(&v, 0.5),
        q1,
        q3,
        whisker_low: inside.first().cloned().unwrap_or(q1),
        whisker_high: inside.last().cloned().unwrap_or(q3),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        outliers: v.iter().cloned().filter(|&x| x < lo || x > hi).collect(),
    })
}

/// Mean squared second difference of the unwrapped yaw; small values mean
/// a smooth heading sequence.
pub fn heading_roughness<P: PoseLike>(poses: &[P]) -> f64 {
    if poses.len() < 3 {
        return 0.0;
    }
    let mut unwrapped = vec![poses[0].yaw()];
    for w in poses.windows(2) {
        let d = crate::geometry::wrap_angle(w[1].yaw() - w[0].yaw());
        unwrapped.push(unwrapped.last().unwrap() + d);
    }
    let n = unwrapped.len() - 2;
    unwrapped.windows(3).map(|w| (w[2] - 2.0 * w[1] + w[0]).powi(2)).sum::<f64>() / n as f64
}

/// [`heading_roughness`] without the second differences that involve the
/// transition into any step in `turn_steps`, i.e. the commanded turns
/// shared by every estimate.
pub fn heading_roughness_straight<P: PoseLike>(poses: &[P], turn_steps: &[usize]) -> f64 {
    if poses.len() < 3 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut count = 0;
    for c in 1..poses.len() - 1 {
        if turn_steps.iter().any(|&s| c + 1 == s || c == s) {
            continue;
        }
        let d1 = crate::geometry::wrap_angle(poses[c].yaw() - poses[c - 1].yaw());
        let d2 = crate::geometry::wrap_angle(poses[c + 1].yaw() - poses[c].yaw());
        sum += (d2 - d1).powi(2);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Largest position distance between two trajectories over `range`.
pub fn max_position_gap<P: PoseLike>(a: &[P], b: &[P], range: std::ops::Range<usize>) -> f64 {
    range
        .map(|t| {
            a[t].position_slice()
                .iter()
                .zip(b[t].position_slice())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

/// Number of mutually distinct trajectories, where two trajectories are the
/// same when they stay within `tol` of each other over `range`.
pub fn count_distinct<P: PoseLike>(trajectories: &[Vec<P>], range: std::ops::Range<usize>, tol: f64) -> usize {
    let mut reps: Vec<&Vec<P>> = Vec::new();
    for tr in trajectories {
        if reps.iter().all(|r| max_position_gap(r, tr, range.clone()) > tol) {
            reps.push(tr);
        }
    }
    reps.len()
}
