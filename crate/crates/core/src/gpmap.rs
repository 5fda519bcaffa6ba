//! Reduced-rank Gaussian-process maps on a box domain.
//!
//! The field is expanded in the Dirichlet eigenfunctions of the Laplacian,
//! `f(x) ≈ Σ_j φ_j(x) θ_j`, with independent Gaussian weights whose variances
//! are the kernel's spectral density at `√λ_j`.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::linalg::{chol_logdet, spd_cholesky, symmetrize, LN_2PI};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Radio,
    Magnetic,
}

/// Squared-exponential (plus optional linear) kernel hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelHyper {
    pub sigma_f2: f64,
    pub ell: f64,
    #[serde(default)]
    pub sigma_lin2: f64,
    pub sigma_noise2: f64,
}

impl KernelHyper {
    pub fn validate(&self, kind: MapKind) -> Result<()> {
        let ok = self.sigma_f2 > 0.0
            && self.ell > 0.0
            && self.sigma_noise2 > 0.0
            && (kind == MapKind::Radio || self.sigma_lin2 > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("kernel hyperparameters must be positive: {self:?}")))
        }
    }

    pub fn se_kernel(&self, x: &[f64], y: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        self.sigma_f2 * (-0.5 * r2 / (self.ell * self.ell)).exp()
    }
}

/// Spectral density of the SE kernel at frequency `√λ` in `d` dimensions.
pub fn spectral_density_se(hyper: &KernelHyper, lambda: f64, d: usize) -> f64 {
    let ell = hyper.ell;
    hyper.sigma_f2 * (2.0 * PI).powf(0.5 * d as f64) * ell.powi(d as i32) * (-0.5 * ell * ell * lambda).exp()
}

/// A box `[lower, upper]` with the `m` Laplace eigenfunctions of smallest
/// eigenvalue.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    indices: Vec<Vec<usize>>,
    eigenvalues: Vec<f64>,
    max_index: Vec<usize>,
}

impl BasisDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, m: usize) -> Result<Self> {
        let d = lower.len();
        if d == 0 || d != upper.len() || lower.iter().zip(&upper).any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidArgument(format!("invalid basis box {lower:?}..{upper:?}")));
        }
        if m == 0 {
            return Err(Error::InvalidArgument("basis needs at least one function".into()));
        }
        let half: Vec<f64> = lower.iter().zip(&upper).map(|(a, b)| 0.5 * (b - a)).collect();
        let per_dim = (m as f64).powf(1.0 / d as f64).ceil() as usize;
        let freq = |dim: usize, j: usize| PI * j as f64 / (2.0 * half[dim]);
        let cap: f64 = (0..d).map(|k| freq(k, per_dim).powi(2)).sum();
        let limits: Vec<usize> = (0..d)
            .map(|k| (cap.sqrt() * 2.0 * half[k] / PI).floor() as usize + 1)
            .collect();

        let mut candidates: Vec<(f64, Vec<usize>)> = Vec::new();
        let mut idx = vec![1usize; d];
        loop {
            let lam: f64 = (0..d).map(|k| freq(k, idx[k]).powi(2)).sum();
            if lam <= cap * (1.0 + 1e-12) {
                candidates.push((lam, idx.clone()));
            }
            let mut k = 0;
            loop {
                if k == d {
                    break;
                }
                idx[k] += 1;
                if idx[k] <= limits[k] {
                    break;
                }
                idx[k] = 1;
                k += 1;
            }
            if k == d {
                break;
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        candidates.truncate(m);
        if candidates.len() < m {
            return Err(Error::InvalidArgument(format!("could not enumerate {m} basis functions")));
        }
        let mut max_index = vec![0usize; d];
        for (_, j) in &candidates {
            for k in 0..d {
                max_index[k] = max_index[k].max(j[k]);
            }
        }
        let (eigenvalues, indices) = candidates.into_iter().unzip();
        Ok(BasisDomain {
            lower,
            upper,
            indices,
            eigenvalues,
            max_index,
        })
    }

    /// Box around `points` inflated by `max(2ℓ, 10% of the extent)` per side.
    pub fn around_points(points: &[Vec<f64>], ell: f64, m: usize) -> Result<Self> {
        let d = points.first().map(|p| p.len()).unwrap_or(0);
        if d == 0 {
            return Err(Error::InvalidArgument("no points to size the basis domain".into()));
        }
        let mut lower = vec![f64::INFINITY; d];
        let mut upper = vec![f64::NEG_INFINITY; d];
        for p in points {
            for k in 0..d {
                lower[k] = lower[k].min(p[k]);
                upper[k] = upper[k].max(p[k]);
            }
        }
        for k in 0..d {
            let margin = (2.0 * ell).max(0.1 * (upper[k] - lower[k]));
            lower[k] -= margin;
            upper[k] += margin;
        }
        BasisDomain::new(lower, upper, m)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// The first `m` functions of this basis on the same box.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        BasisDomain::new(self.lower.clone(), self.upper.clone(), m)
    }

    fn half_width(&self, k: usize) -> f64 {
        0.5 * (self.upper[k] - self.lower[k])
    }

    /// True when `x` lies at least `margin` inside the box on every side.
    pub fn is_interior(&self, x: &[f64], margin: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (a, b))| *v >= a + margin && *v <= b - margin)
    }

    /// Per-dimension tables of `sin` and `cos` terms for every index used.
    fn tables(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
        let d = self.dim();
        let mut sines = Vec::with_capacity(d);
        let mut cosines = Vec::with_capacity(d);
        let mut scale = Vec::with_capacity(d);
        for k in 0..d {
            let l = self.half_width(k);
            let w = PI * (x[k] - self.lower[k]) / (2.0 * l);
            let n = self.max_index[k];
            let mut s = Vec::with_capacity(n + 1);
            let mut c = Vec::with_capacity(n + 1);
            for j in 0..=n {
                let (sj, cj) = (j as f64 * w).sin_cos();
                s.push(sj);
                c.push(cj);
            }
            sines.push(s);
            cosines.push(c);
            scale.push(1.0 / l.sqrt());
        }
        (sines, cosines, scale)
    }

    /// `Φ(x)`, one value per basis function.
    pub fn eval(&self, x: &[f64]) -> DVector<f64> {
        let (s, _, scale) = self.tables(x);
        let norm: f64 = scale.iter().product();
        DVector::from_iterator(
            self.len(),
            self.indices
                .iter()
                .map(|j| norm * j.iter().enumerate().map(|(k, &jk)| s[k][jk]).product::<f64>()),
        )
    }

    /// Gradient of every basis function, as a `d × m` matrix.
    pub fn grad(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let (s, c, scale) = self.tables(x);
        let norm: f64 = scale.iter().product();
        let mut g = DMatrix::zeros(d, self.len());
        for (col, j) in self.indices.iter().enumerate() {
            for r in 0..d {
                let mut v = norm;
                for k in 0..d {
                    v *= if k == r {
                        PI * j[k] as f64 / (2.0 * self.half_width(k)) * c[k][j[k]]
                    } else {
                        s[k][j[k]]
                    };
                }
                g[(r, col)] = v;
            }
        }
        g
    }

    /// `Σ_j w_j ∇²φ_j(x)`, the Jacobian of the field `∇Φ(x) w`.
    pub fn weighted_hessian(&self, x: &[f64], weights: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let (s, c, scale) = self.tables(x);
        let norm: f64 = scale.iter().product();
        let mut h = DMatrix::zeros(d, d);
        for (j, &w) in self.indices.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let freq: Vec<f64> = (0..d).map(|k| PI * j[k] as f64 / (2.0 * self.half_width(k))).collect();
            for r in 0..d {
                for q in r..d {
                    let mut v = norm * w;
                    for k in 0..d {
                        let sk = s[k][j[k]];
                        let ck = c[k][j[k]];
                        v *= match (k == r, k == q) {
                            (true, true) => -freq[k] * freq[k] * sk,
                            (true, false) | (false, true) => freq[k] * ck,
                            (false, false) => sk,
                        };
                    }
                    h[(r, q)] += v;
                    if q != r {
                        h[(q, r)] += v;
                    }
                }
            }
        }
        h
    }

    /// Prior variances `S(√λ_j)` of the basis weights.
    pub fn spectral_weights(&self, hyper: &KernelHyper) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|&l| spectral_density_se(hyper, l, self.dim()))
            .collect()
    }
}

/// Conditional Gaussian posterior `N(θ̂, P)` of the map parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMapBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Innovation of a linear-Gaussian measurement, reusable for the update.
#[derive(Clone, Debug)]
pub struct Innovation {
    pub residual: DVector<f64>,
    /// `C P Cᵀ + Σ`.
    pub s: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    /// `P Cᵀ`.
    pub pct: DMatrix<f64>,
}

impl Innovation {
    /// `log N(y; C θ̂, C P Cᵀ + Σ)`.
    pub fn loglik(&self) -> f64 {
        let n = self.residual.len() as f64;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&self.residual)
            .expect("nonsingular factor");
        -0.5 * (n * LN_2PI + chol_logdet(&self.chol) + z.norm_squared())
    }
}

impl GaussianMapBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "belief mean {} vs covariance {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        Ok(GaussianMapBelief { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn innovation(&self, c: &DMatrix<f64>, sigma: &DMatrix<f64>, y: &DVector<f64>) -> Result<Innovation> {
        if c.ncols() != self.dim() || c.nrows() != y.len() || sigma.nrows() != y.len() || sigma.ncols() != y.len() {
            return Err(Error::Dimension(format!(
                "C {}x{}, Σ {}x{}, y {} for belief of dimension {}",
                c.nrows(),
                c.ncols(),
                sigma.nrows(),
                sigma.ncols(),
                y.len(),
                self.dim()
            )));
        }
        let pct = if c.nrows() == 1 {
            let mut v = DMatrix::zeros(self.dim(), 1);
            // P is symmetric, so the column-major product P cᵀ is the cheap one
            v.column_mut(0).gemv(1.0, &self.cov, &c.row(0).transpose(), 0.0);
            v
        } else {
            &self.cov * c.transpose()
        };
        let mut s = c * &pct + sigma;
        symmetrize(&mut s);
        let chol = spd_cholesky(s.clone())?;
        let residual = y - c * &self.mean;
        Ok(Innovation { residual, s, chol, pct })
    }

    /// Applies a measurement whose innovation was computed on this belief.
    pub fn apply(&mut self, innov: &Innovation) {
        if innov.residual.len() == 1 {
            // w = P cᵀ / √s; P ← P − w wᵀ stays exactly symmetric
            let s = innov.s[(0, 0)];
            let w = innov.pct.column(0) / s.sqrt();
            self.mean.axpy(innov.residual[0] / s.sqrt(), &w, 1.0);
            let n = self.dim();
            let ws = w.as_slice();
            let data = self.cov.as_mut_slice();
            for (j, col) in data.chunks_exact_mut(n).enumerate() {
                axpy_slice(col, -ws[j], ws);
            }
            return;
        }
        // K = P Cᵀ S⁻¹, P ← P − K (P Cᵀ)ᵀ
        let kt = innov.chol.solve(&innov.pct.transpose());
        self.mean += kt.transpose() * &innov.residual;
        self.cov.gemm(-1.0, &innov.pct, &kt, 1.0);
        symmetrize(&mut self.cov);
    }

    /// In-place conditioning on `y = C θ + ε`, `ε ~ N(0, Σ)`. Returns the
    /// innovation.
    pub fn update(&mut self, c: &DMatrix<f64>, sigma: &DMatrix<f64>, y: &DVector<f64>) -> Result<Innovation> {
        let innov = self.innovation(c, sigma, y)?;
        self.apply(&innov);
        Ok(innov)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.cov.clone().symmetric_eigenvalues().min()
    }
}

#[inline]
fn axpy_slice(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Functional form of [`GaussianMapBelief::update`]: returns the posterior,
/// the residual `y − C θ̂` and the innovation covariance.
pub fn update_map(
    belief: &GaussianMapBelief,
    c: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(GaussianMapBelief, DVector<f64>, DMatrix<f64>)> {
    let mut next = belief.clone();
    let innov = next.update(c, sigma, y)?;
    Ok((next, innov.residual, innov.s))
}

/// Zero-mean prior of the map weights.
pub fn prior_belief(domain: &BasisDomain, hyper: &KernelHyper, kind: MapKind) -> GaussianMapBelief {
    let spectral = domain.spectral_weights(hyper);
    let diag: Vec<f64> = match kind {
        MapKind::Radio => spectral,
        MapKind::Magnetic => [hyper.sigma_lin2; 3].into_iter().chain(spectral).collect(),
    };
    let n = diag.len();
    GaussianMapBelief {
        mean: DVector::zeros(n),
        cov: DMatrix::from_diagonal(&DVector::from_vec(diag)),
    }
}

/// Map-parameter dimension for a basis of `m` functions.
pub fn map_dim(kind: MapKind, m: usize) -> usize {
    match kind {
        MapKind::Radio => m,
        MapKind::Magnetic => m + 3,
    }
}

/// Navigation-frame measurement matrix of the field at `x`.
pub fn field_matrix(domain: &BasisDomain, x: &[f64], kind: MapKind) -> DMatrix<f64> {
    match kind {
        MapKind::Radio => {
            let phi = domain.eval(x);
            DMatrix::from_row_slice(1, phi.len(), phi.as_slice())
        }
        MapKind::Magnetic => {
            let g = domain.grad(x);
            let mut c = DMatrix::zeros(3, g.ncols() + 3);
            c.view_mut((0, 0), (3, 3)).fill_with_identity();
            c.view_mut((0, 3), (3, g.ncols())).copy_from(&g);
            c
        }
    }
}

/// Per-point predictive mean and marginal variance of the field (one column
/// per output component).
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPrediction {
    pub mean: DMatrix<f64>,
    pub variance: DMatrix<f64>,
}

pub fn predict_field(
    belief: &GaussianMapBelief,
    domain: &BasisDomain,
    query: &[Vec<f64>],
    kind: MapKind,
) -> FieldPrediction {
    let outputs = match kind {
        MapKind::Radio => 1,
        MapKind::Magnetic => 3,
    };
    let mut mean = DMatrix::zeros(query.len(), outputs);
    let mut variance = DMatrix::zeros(query.len(), outputs);
    for (row, x) in query.iter().enumerate() {
        let c = field_matrix(domain, x, kind);
        let mu = &c * &belief.mean;
        let cp = &c * &belief.cov;
        for o in 0..outputs {
            mean[(row, o)] = mu[o];
            variance[(row, o)] = cp.row(o).dot(&c.row(o)).max(0.0);
        }
    }
    FieldPrediction { mean, variance }
}
