//! Likelihood of the remaining measurements along a reference trajectory,
//! `p(y_{t:T} | x_{1:t−1}, x'_{t:T}, y_{1:t−1})`, given a particle's map belief.

use nalgebra::{DMatrix, DVector};

use crate::gpmap::{GaussianMapBelief, Innovation};
use crate::linalg::{spd_cholesky, symmetrize, LN_2PI};
use crate::sensors::{InfoAccumulator, LinearizedObservation, MeasurementModel};
use crate::{Error, Result};

/// `log N(y; C θ̂, C P Cᵀ + Σ)` with the innovation for a following update.
pub fn predictive_loglik(
    belief: &GaussianMapBelief,
    c: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(f64, Innovation)> {
    let innov = belief.innovation(c, sigma, y)?;
    Ok((innov.loglik(), innov))
}

/// Dense evaluation of `log N(ȳ; C̄ θ̂, C̄ P C̄ᵀ + I ⊗ Σ)` for stacked blocks.
pub fn future_loglik_dense(
    belief: &GaussianMapBelief,
    cbar: &DMatrix<f64>,
    ybar: &DVector<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let ny = sigma.nrows();
    if ny == 0 || cbar.nrows() % ny != 0 || cbar.nrows() != ybar.len() {
        return Err(Error::Dimension(format!(
            "stacked C has {} rows, ȳ {}, Σ block {}",
            cbar.nrows(),
            ybar.len(),
            ny
        )));
    }
    let mut s = cbar * &belief.cov * cbar.transpose();
    for b in 0..cbar.nrows() / ny {
        let mut block = s.view_mut((b * ny, b * ny), (ny, ny));
        block += sigma;
    }
    symmetrize(&mut s);
    let chol = spd_cholesky(s)?;
    let r = ybar - cbar * &belief.mean;
    Ok(crate::linalg::gaussian_logpdf_chol(&r, &chol))
}

/// Chain-rule evaluation: predictive log-likelihoods with interleaved
/// updates along the observations.
pub fn future_loglik_sequential(belief: &GaussianMapBelief, observations: &[LinearizedObservation]) -> Result<f64> {
    let mut b = belief.clone();
    let mut total = 0.0;
    for obs in observations {
        let innov = b.innovation(&obs.c, &obs.sigma, &obs.y)?;
        total += innov.loglik();
        b.apply(&innov);
    }
    Ok(total)
}

/// Residual statistics of an accumulator re-centred at `theta`:
/// `g = b − J δ`, `c_r = c − 2 bᵀδ + δᵀ J δ`, `δ = θ − centre`.
fn recenter(acc: &InfoAccumulator, theta: &DVector<f64>) -> (DVector<f64>, f64) {
    let delta = theta - &acc.center;
    let jd = &acc.info * &delta;
    let g = &acc.b - &jd;
    let cr = acc.c - 2.0 * acc.b.dot(&delta) + delta.dot(&jd);
    (g, cr)
}

/// Information-form evaluation for one belief:
/// `−½ (n log 2π + Σ log|Σ|) − ½ log|I + P J| − ½ (c_r − gᵀ (I + P J)⁻¹ P g)`.
pub fn future_loglik_info(belief: &GaussianMapBelief, acc: &InfoAccumulator) -> Result<f64> {
    let n = belief.dim();
    if acc.n_obs == 0 {
        return Ok(0.0);
    }
    let (g, cr) = recenter(acc, &belief.mean);
    let mut m = DMatrix::identity(n, n);
    m.gemm(1.0, &belief.cov, &acc.info, 1.0);
    let lu = m.lu();
    let u = lu.u();
    let mut logdet = 0.0;
    for i in 0..n {
        let d = u[(i, i)];
        if !(d.abs() > 0.0) || !d.is_finite() {
            return Err(Error::SingularInnovation { condition: f64::INFINITY });
        }
        logdet += d.abs().ln();
    }
    let pg = &belief.cov * &g;
    let z = lu
        .solve(&pg)
        .ok_or(Error::SingularInnovation { condition: f64::INFINITY })?;
    let quad = cr - g.dot(&z);
    Ok(-0.5 * (acc.n_obs as f64 * LN_2PI + acc.logdet_sigma) - 0.5 * logdet - 0.5 * quad)
}

/// Backward-accumulated information of the reference measurements for
/// exactly linear models: entry `t` covers steps `t..T`.
#[derive(Clone, Debug)]
pub struct ReferenceInfo {
    cumulative: Vec<InfoAccumulator>,
}

impl ReferenceInfo {
    pub fn build<M: MeasurementModel>(model: &M, reference: &[M::Pose], measurements: &[M::Measurement]) -> Result<Self> {
        let n = model.map_dim();
        let zero = DVector::zeros(n);
        let t_len = reference.len();
        let mut cumulative = vec![InfoAccumulator::new(zero.clone()); t_len + 1];
        for t in (0..t_len).rev() {
            let mut acc = cumulative[t + 1].clone();
            model.accumulate_information(&reference[t], &zero, &measurements[t], &mut acc)?;
            cumulative[t] = acc;
        }
        Ok(ReferenceInfo { cumulative })
    }

    /// Information of steps `t..T` (empty for `t ≥ T`).
    pub fn from_step(&self, t: usize) -> &InfoAccumulator {
        &self.cumulative[t.min(self.cumulative.len() - 1)]
    }
}

/// Lower Cholesky factor update `L Lᵀ + sign · x xᵀ`; `x` is consumed as
/// workspace. Returns `false` if the result is not positive definite.
pub fn chol_rank_one(l: &mut DMatrix<f64>, x: &mut DVector<f64>, sign: f64) -> bool {
    let n = l.nrows();
    for k in 0..n {
        let lkk = l[(k, k)];
        let xk = x[k];
        let r2 = lkk * lkk + sign * xk * xk;
        if !(r2 > 1e-12 * lkk * lkk) || !r2.is_finite() {
            return false;
        }
        let r = r2.sqrt();
        let c = r / lkk;
        let s = xk / lkk;
        l[(k, k)] = r;
        for i in (k + 1)..n {
            let lik = (l[(i, k)] + sign * s * x[i]) / c;
            l[(i, k)] = lik;
            x[i] = c * x[i] - s * lik;
        }
    }
    true
}

/// Per-particle factor of `Λ = P⁻¹ + J_t` (own information plus the
/// reference's remaining information) and `log|P|`, kept current along the
/// particle's history so that the future likelihood costs `O(n²)`.
#[derive(Clone, Debug)]
pub struct InfoTracker {
    l: DMatrix<f64>,
    logdet_p: f64,
}

fn inverse_spd(p: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let chol = p
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("map covariance"))?;
    let logdet = crate::linalg::chol_logdet(&chol);
    Ok((chol.inverse(), logdet))
}

impl InfoTracker {
    /// Builds the factor from scratch: `Λ = P⁻¹ + J`.
    pub fn from_belief(belief: &GaussianMapBelief, future: &InfoAccumulator) -> Result<Self> {
        let (mut lambda, logdet_p) = inverse_spd(&belief.cov)?;
        lambda += &future.info;
        symmetrize(&mut lambda);
        let l = lambda
            .cholesky()
            .ok_or(Error::NotPositiveDefinite("future information"))?
            .unpack();
        Ok(InfoTracker { l, logdet_p })
    }

    pub fn logdet_p(&self) -> f64 {
        self.logdet_p
    }

    /// `log p(y_{t:T} | …)` for `belief` whose tracker this is, with `future`
    /// the reference information from step `t`.
    pub fn future_loglik(&self, belief: &GaussianMapBelief, future: &InfoAccumulator) -> f64 {
        if future.n_obs == 0 {
            return 0.0;
        }
        let (g, cr) = recenter(future, &belief.mean);
        let z = self.l.solve_lower_triangular(&g).expect("positive diagonal");
        let logdet_lambda: f64 = 2.0 * (0..self.l.nrows()).map(|i| self.l[(i, i)].ln()).sum::<f64>();
        -0.5 * (future.n_obs as f64 * LN_2PI + future.logdet_sigma) - 0.5 * self.logdet_p - 0.5 * logdet_lambda - 0.5 * cr
            + 0.5 * z.norm_squared()
    }

    /// Advances the tracker over one step: the particle absorbed `own` (with
    /// innovation `innov`) while the reference information of this step,
    /// `reference`, leaves the future window. `belief` is the particle's
    /// updated belief and `next` the reference information from the next
    /// step, used if the factor has to be rebuilt.
    pub fn advance(
        &mut self,
        own: Option<&LinearizedObservation>,
        innov: Option<&Innovation>,
        reference: Option<&LinearizedObservation>,
        same_pose: bool,
        belief: &GaussianMapBelief,
        next: &InfoAccumulator,
    ) -> Result<()> {
        if let (Some(obs), Some(innov)) = (own, innov) {
            let sigma_chol = spd_cholesky(obs.sigma.clone())?;
            self.logdet_p += crate::linalg::chol_logdet(&sigma_chol) - crate::linalg::chol_logdet(&innov.chol);
        }
        if same_pose {
            return Ok(());
        }
        let mut ok = true;
        if let Some(obs) = own {
            ok &= self.rank_update(obs, 1.0)?;
        }
        if let Some(obs) = reference {
            ok = ok && self.rank_update(obs, -1.0)?;
        }
        if !ok {
            let logdet_p = self.logdet_p;
            *self = InfoTracker::from_belief(belief, next)?;
            self.logdet_p = logdet_p;
        }
        Ok(())
    }

    fn rank_update(&mut self, obs: &LinearizedObservation, sign: f64) -> Result<bool> {
        let chol = spd_cholesky(obs.sigma.clone())?;
        let w = chol.l_dirty().solve_lower_triangular(&obs.c).expect("nonsingular noise factor");
        for r in 0..w.nrows() {
            let mut x = w.row(r).transpose();
            if !chol_rank_one(&mut self.l, &mut x, sign) {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
