//! Small dense linear-algebra helpers shared by the filters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Innovation covariances with a condition estimate above this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factorization of a symmetric positive-definite matrix, rejecting
/// factors whose diagonal ratio implies a condition number above
/// [`MAX_CONDITION`].
pub fn spd_cholesky(s: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let chol = match Cholesky::new(s) {
        Some(c) => c,
        None => {
            return Err(Error::SingularInnovation {
                condition: f64::INFINITY,
            })
        }
    };
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..l.nrows() {
        let d = l[(i, i)];
        lo = lo.min(d);
        hi = hi.max(d);
    }
    let condition = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularInnovation { condition });
    }
    Ok(chol)
}

pub fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0
}

/// `log N(r; 0, S)` given the Cholesky factor of `S`.
pub fn gaussian_logpdf_chol(residual: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = residual.len() as f64;
    let z = chol.l_dirty().solve_lower_triangular(residual).unwrap_or_else(|| residual.clone());
    -0.5 * (n * LN_2PI + chol_logdet(chol) + z.norm_squared())
}

pub fn gaussian_logpdf(residual: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = spd_cholesky(cov.clone())?;
    Ok(gaussian_logpdf_chol(residual, &chol))
}

/// Log-density of a zero-mean Gaussian with a possibly singular covariance.
///
/// Directions with zero variance are treated as Dirac components: the
/// residual must vanish there (to `dirac_tol`), otherwise the density is
/// `-inf`. Those components contribute nothing to the returned value, so
/// values are only comparable between arguments that share `cov`.
pub fn degenerate_gaussian_logpdf(residual: &DVector<f64>, cov: &DMatrix<f64>, dirac_tol: f64) -> f64 {
    let n = residual.len();
    // diagonal fast path
    let mut diagonal = true;
    'outer: for i in 0..n {
        for j in 0..n {
            if i != j && cov[(i, j)] != 0.0 {
                diagonal = false;
                break 'outer;
            }
        }
    }
    let mut acc = 0.0;
    if diagonal {
        for i in 0..n {
            let v = cov[(i, i)];
            let r = residual[i];
            if v <= 0.0 {
                if r.abs() > dirac_tol {
                    return f64::NEG_INFINITY;
                }
            } else {
                acc += -0.5 * (LN_2PI + v.ln() + r * r / v);
            }
        }
        return acc;
    }
    let eig = SymmetricEigen::new(cov.clone());
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    for k in 0..n {
        let v = eig.eigenvalues[k];
        let r = eig.eigenvectors.column(k).dot(residual);
        if v <= 1e-14 * scale || v <= 0.0 {
            if r.abs() > dirac_tol {
                return f64::NEG_INFINITY;
            }
        } else {
            acc += -0.5 * (LN_2PI + v.ln() + r * r / v);
        }
    }
    acc
}

/// Square-root factor `A` with `A Aᵀ = M` for a symmetric PSD matrix.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return c.l();
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut a = eig.eigenvectors.clone();
    for (k, mut col) in a.column_iter_mut().enumerate() {
        col *= eig.eigenvalues[k].max(0.0).sqrt();
    }
    a
}

pub fn sample_standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Draws from `N(mean, cov)`; `cov` may be singular.
pub fn sample_gaussian<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let a = psd_sqrt(cov);
    mean + a * sample_standard_normal(mean.len(), rng)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights into probabilities with a max-subtraction guard.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights
        .iter()
        .cloned()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || log_weights.iter().any(|v| v.is_nan()) {
        return Err(Error::DegenerateWeights);
    }
    let mut w: Vec<f64> = log_weights.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

pub fn skew(v: &nalgebra::Vector3<f64>) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
