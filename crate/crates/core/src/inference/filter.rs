//! Rao-Blackwellized particle filter with ancestor sampling, its
//! conditional variant, and the MCMC smoother built on top of it.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::future::{future_loglik_info, InfoTracker, ReferenceInfo};
use super::resample::{reassign, sample_index, systematic_resample};
use crate::geometry::{MotionModel, PoseLike};
use crate::gpmap::{GaussianMapBelief, Innovation};
use crate::linalg::{log_sum_exp, normalize_log_weights, sample_gaussian};
use crate::rng::{substream, Stream};
use crate::sensors::{InfoAccumulator, LinearizedObservation, MeasurementModel};
use crate::{Error, Result};

/// Everything that defines a SLAM smoothing problem: `T` measurements and
/// `T − 1` odometry inputs starting from the known pose `x0`.
pub struct SlamProblem<'a, D: MotionModel, M: MeasurementModel<Pose = D::Pose>> {
    pub dynamics: &'a D,
    pub model: &'a M,
    pub inputs: &'a [D::Input],
    pub measurements: &'a [M::Measurement],
    pub x0: D::Pose,
}

impl<'a, D: MotionModel, M: MeasurementModel<Pose = D::Pose>> SlamProblem<'a, D, M> {
    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.measurements.is_empty() {
            return Err(Error::InvalidArgument("no measurements".into()));
        }
        if self.inputs.len() + 1 != self.measurements.len() {
            return Err(Error::LengthMismatch {
                left: self.inputs.len() + 1,
                right: self.measurements.len(),
            });
        }
        Ok(())
    }

    fn degenerate_dynamics(&self) -> bool {
        self.inputs.iter().any(|u| self.dynamics.has_dirac_component(u))
    }
}

/// How the conditional filter evaluates the likelihood of the reference's
/// remaining measurements for each ancestor candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FutureMethod {
    /// Per-particle information factors updated in `O(n²)` per step; falls
    /// back to [`FutureMethod::Direct`] where it does not apply.
    Incremental,
    /// Information-form evaluation from scratch for every candidate.
    Direct,
    /// Predictive log-likelihoods with interleaved map updates along the
    /// reference (relinearizing at every step for linearized models).
    Sequential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterOptions {
    pub particles: usize,
    pub future: FutureMethod,
    /// Ancestor candidates whose prior weight (filter weight times transition
    /// density) is this many nats below the best are not evaluated.
    pub prune_nats: f64,
}

impl Default for FilterOptions {
    fn default() -> Self {
        FilterOptions {
            particles: 100,
            future: FutureMethod::Incremental,
            prune_nats: 1000.0,
        }
    }
}

/// Poses, resampling ancestors and normalized weights of a particle system
/// at every step. `ancestors[t][i]` is the index at `t − 1` of particle `i`
/// at `t`; `ancestors[0]` is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Genealogy<P> {
    pub poses: Vec<Vec<P>>,
    pub ancestors: Vec<Vec<usize>>,
    pub weights: Vec<Vec<f64>>,
}

impl<P: PoseLike> Genealogy<P> {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn n_particles(&self) -> usize {
        self.poses.first().map_or(0, |p| p.len())
    }

    /// Index at every step of the ancestors of final particle `i`.
    pub fn lineage(&self, i: usize) -> Vec<usize> {
        let t_len = self.len();
        let mut idx = vec![0; t_len];
        let mut cur = i;
        for t in (0..t_len).rev() {
            idx[t] = cur;
            cur = self.ancestors[t][cur];
        }
        idx
    }

    /// Full trajectory of final particle `i`.
    pub fn trace(&self, i: usize) -> Vec<P> {
        self.lineage(i)
            .into_iter()
            .enumerate()
            .map(|(t, j)| self.poses[t][j])
            .collect()
    }

    /// Weighted mean over the final particles' trajectories.
    pub fn path_mean(&self) -> Vec<P> {
        let t_len = self.len();
        let n = self.n_particles();
        let mut agg = self.weights[t_len - 1].clone();
        let mut out = vec![self.poses[0][0]; t_len];
        for t in (0..t_len).rev() {
            out[t] = P::weighted_mean(&self.poses[t], &agg);
            if t > 0 {
                let mut prev = vec![0.0; n];
                for i in 0..n {
                    prev[self.ancestors[t][i]] += agg[i];
                }
                agg = prev;
            }
        }
        out
    }
}

/// Final particle beliefs with normalized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet {
    pub beliefs: Vec<GaussianMapBelief>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FilterOutput<P> {
    pub genealogy: Genealogy<P>,
    pub particles: ParticleSet,
    /// Weighted mean pose at every step using that step's weights.
    pub filtering_means: Vec<P>,
    /// Particle estimate of `log p(y_{1:T})` (meaningful for the
    /// unconditional filter).
    pub log_evidence: f64,
    /// Number of steps at which the reference took a history other than
    /// its own (conditional runs only).
    pub ancestor_switches: usize,
}

/// One draw of the MCMC smoother: a trajectory and a map.
#[derive(Clone, Debug, PartialEq)]
pub struct SmootherSample<P> {
    pub k: usize,
    pub trajectory: Vec<P>,
    /// Draw from the trajectory's conditional map posterior.
    pub theta: DVector<f64>,
    /// The conditional map posterior itself.
    pub map: GaussianMapBelief,
    pub ancestor_switches: usize,
}

impl<P: PoseLike> FilterOutput<P> {
    /// Weighted mean of the final particles' trajectories.
    pub fn path_mean(&self) -> Vec<P> {
        self.genealogy.path_mean()
    }

    /// Draws one trajectory with probability equal to its final weight and a
    /// map from its conditional posterior.
    pub fn sample(&self, seed: u64, k: usize) -> Result<SmootherSample<P>> {
        let j = sample_index(&self.particles.weights, &mut substream(seed, Stream::Select, k as u64, 0, 0))?;
        let belief = &self.particles.beliefs[j];
        let theta = sample_gaussian(
            &belief.mean,
            &belief.cov,
            &mut substream(seed, Stream::MapDraw, k as u64, 0, 0),
        );
        Ok(SmootherSample {
            k,
            trajectory: self.genealogy.trace(j),
            theta,
            map: belief.clone(),
            ancestor_switches: self.ancestor_switches,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SmootherOutput<P> {
    /// The unconditional filter run that supplied the initial reference.
    pub filter: FilterOutput<P>,
    pub samples: Vec<SmootherSample<P>>,
}

/// Unconditional Rao-Blackwellized particle filter, every particle starting
/// at `x0` with the prior map belief.
pub fn rbpf_as_run<D, M>(problem: &SlamProblem<D, M>, options: &FilterOptions, seed: u64) -> Result<FilterOutput<D::Pose>>
where
    D: MotionModel,
    M: MeasurementModel<Pose = D::Pose>,
{
    run_filter(problem, options, None, seed, 0)
}

/// Conditional filter with ancestor sampling around `reference`; particle
/// `N − 1` carries the reference. Returns the next smoother draw.
pub fn crbpf_as_run<D, M>(
    problem: &SlamProblem<D, M>,
    options: &FilterOptions,
    reference: &[D::Pose],
    seed: u64,
    k: usize,
) -> Result<SmootherSample<D::Pose>>
where
    D: MotionModel,
    M: MeasurementModel<Pose = D::Pose>,
{
    let out = run_filter(problem, options, Some(reference), seed, k)?;
    out.sample(seed, k)
}

/// Like [`crbpf_as_run`] but returns the whole conditional filter output.
pub fn crbpf_as_filter<D, M>(
    problem: &SlamProblem<D, M>,
    options: &FilterOptions,
    reference: &[D::Pose],
    seed: u64,
    k: usize,
) -> Result<FilterOutput<D::Pose>>
where
    D: MotionModel,
    M: MeasurementModel<Pose = D::Pose>,
{
    run_filter(problem, options, Some(reference), seed, k)
}

/// Particle Gibbs smoother: an initial trajectory from the unconditional
/// filter, then `iterations` conditional runs each conditioned on the
/// previous draw. No draws are discarded.
pub fn mcmc_smoother_run<D, M>(
    problem: &SlamProblem<D, M>,
    options: &FilterOptions,
    iterations: usize,
    seed: u64,
) -> Result<SmootherOutput<D::Pose>>
where
    D: MotionModel,
    M: MeasurementModel<Pose = D::Pose>,
{
    if iterations == 0 {
        return Err(Error::InvalidArgument("the smoother needs at least one iteration".into()));
    }
    let filter = rbpf_as_run(problem, options, seed)?;
    let mut reference = filter.sample(seed, 0)?.trajectory;
    let mut samples = Vec::with_capacity(iterations);
    for k in 1..=iterations {
        let s = crbpf_as_run(problem, options, &reference, seed, k)?;
        reference = s.trajectory.clone();
        samples.push(s);
    }
    Ok(SmootherOutput { filter, samples })
}

/// Ancestor probabilities for the reference at step `t`:
/// `w_{t−1}^i p(x'_t | x_{t−1}^i) p(y_{t:T} | x_{1:t−1}^i, x'_{t:T}, y_{1:t−1})`,
/// normalized. `reference_future` and `future_measurements` cover `t..T`.
#[allow(clippy::too_many_arguments)]
pub fn ancestor_weights_ref<D, M>(
    dynamics: &D,
    model: &M,
    prev_poses: &[D::Pose],
    prev_weights: &[f64],
    beliefs: &[GaussianMapBelief],
    input: &D::Input,
    reference_future: &[D::Pose],
    future_measurements: &[M::Measurement],
) -> Result<Vec<f64>>
where
    D: MotionModel,
    M: MeasurementModel<Pose = D::Pose>,
{
    let mut logw = Vec::with_capacity(prev_poses.len());
    for i in 0..prev_poses.len() {
        let base = prev_weights[i].ln() + dynamics.transition_logpdf(&prev_poses[i], input, &reference_future[0]);
        if base == f64::NEG_INFINITY {
            logw.push(base);
            continue;
        }
        let mut acc = InfoAccumulator::new(beliefs[i].mean.clone());
        for (x, y) in reference_future.iter().zip(future_measurements) {
            model.accumulate_information(x, &beliefs[i].mean, y, &mut acc)?;
        }
        logw.push(base + future_loglik_info(&beliefs[i], &acc)?);
    }
    normalize_log_weights(&logw).map_err(|_| Error::DegenerateAncestors)
}

fn weighted_mean<P: PoseLike>(poses: &[P], w: &[f64]) -> P {
    P::weighted_mean(poses, w)
}

struct StepWeights {
    logw: Vec<f64>,
    observations: Vec<Option<LinearizedObservation>>,
    innovations: Vec<Option<Innovation>>,
}

fn weigh<M: MeasurementModel>(
    model: &M,
    poses: &[M::Pose],
    beliefs: &[GaussianMapBelief],
    y: &M::Measurement,
) -> Result<StepWeights> {
    let n = poses.len();
    let mut out = StepWeights {
        logw: Vec::with_capacity(n),
        observations: Vec::with_capacity(n),
        innovations: Vec::with_capacity(n),
    };
    for i in 0..n {
        match model.observe(&poses[i], &beliefs[i].mean, y) {
            Some(obs) => {
                let innov = beliefs[i].innovation(&obs.c, &obs.sigma, &obs.y)?;
                out.logw.push(innov.loglik());
                out.observations.push(Some(obs));
                out.innovations.push(Some(innov));
            }
            None => {
                out.logw.push(0.0);
                out.observations.push(None);
                out.innovations.push(None);
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn candidate_future_loglik<M: MeasurementModel>(
    model: &M,
    method: FutureMethod,
    belief: &GaussianMapBelief,
    tracker: Option<&InfoTracker>,
    ref_info: Option<&ReferenceInfo>,
    reference: &[M::Pose],
    measurements: &[M::Measurement],
    t: usize,
) -> Result<f64> {
    match (method, tracker, ref_info) {
        (FutureMethod::Incremental, Some(tr), Some(info)) => Ok(tr.future_loglik(belief, info.from_step(t))),
        (FutureMethod::Sequential, _, _) => {
            let mut b = belief.clone();
            let mut total = 0.0;
            for tau in t..reference.len() {
                if let Some(obs) = model.observe(&reference[tau], &b.mean, &measurements[tau]) {
                    let innov = b.innovation(&obs.c, &obs.sigma, &obs.y)?;
                    total += innov.loglik();
                    b.apply(&innov);
                }
            }
            Ok(total)
        }
        (_, _, Some(info)) => future_loglik_info(belief, info.from_step(t)),
        (_, _, None) => {
            let mut acc = InfoAccumulator::new(belief.mean.clone());
            for tau in t..reference.len() {
                model.accumulate_information(&reference[tau], &belief.mean, &measurements[tau], &mut acc)?;
            }
            future_loglik_info(belief, &acc)
        }
    }
}

fn run_filter<D, M>(
    problem: &SlamProblem<D, M>,
    options: &FilterOptions,
    reference: Option<&[D::Pose]>,
    seed: u64,
    k: usize,
) -> Result<FilterOutput<D::Pose>>
where
    D: MotionModel,
    M: MeasurementModel<Pose = D::Pose>,
{
    problem.validate()?;
    let n = options.particles;
    let t_len = problem.len();
    if n == 0 || (reference.is_some() && n < 2) {
        return Err(Error::InvalidArgument(format!(
            "{n} particles is too few for this filter"
        )));
    }
    if let Some(r) = reference {
        if r.len() != t_len {
            return Err(Error::LengthMismatch {
                left: r.len(),
                right: t_len,
            });
        }
    }
    let model = problem.model;
    let dynamics = problem.dynamics;
    let ys = problem.measurements;
    let n_free = if reference.is_some() { n - 1 } else { n };
    let kk = k as u64;

    // step 0: all particles at the known initial pose
    let mut belief0 = model.prior();
    let mut log_evidence = 0.0;
    if let Some(obs) = model.observe(&problem.x0, &belief0.mean, &ys[0]) {
        let innov = belief0.innovation(&obs.c, &obs.sigma, &obs.y).map_err(|e| e.at_step(0))?;
        log_evidence += innov.loglik();
        belief0.apply(&innov);
    }

    let ref_info = match reference {
        Some(r) if model.is_exactly_linear() => Some(ReferenceInfo::build(model, r, ys)?),
        _ => None,
    };
    let use_tracker = options.future == FutureMethod::Incremental
        && ref_info.is_some()
        && !problem.degenerate_dynamics()
        && t_len > 1;
    let mut trackers: Option<Vec<InfoTracker>> = if use_tracker {
        let tr = InfoTracker::from_belief(&belief0, ref_info.as_ref().unwrap().from_step(1))?;
        Some(vec![tr; n])
    } else {
        None
    };

    let mut beliefs = vec![belief0; n];
    let mut genealogy = Genealogy {
        poses: vec![vec![problem.x0; n]],
        ancestors: vec![(0..n).collect()],
        weights: vec![vec![1.0 / n as f64; n]],
    };
    let mut filtering_means = vec![problem.x0];
    let mut switches = 0;

    for t in 1..t_len {
        let w_prev = &genealogy.weights[t - 1];
        let prev_poses = &genealogy.poses[t - 1];
        let input = &problem.inputs[t - 1];
        let mut anc = systematic_resample(w_prev, n_free, &mut substream(seed, Stream::Resample, kk, t as u64, 0))
            .map_err(|e| e.at_step(t))?;

        let mut poses: Vec<D::Pose> = anc
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let mut rng = substream(seed, Stream::Propagate, kk, t as u64, i as u64);
                dynamics.propagate(&prev_poses[a], input, &mut rng)
            })
            .collect();

        if let Some(r) = reference {
            let target = &r[t];
            let base: Vec<f64> = (0..n)
                .map(|i| w_prev[i].ln() + dynamics.transition_logpdf(&prev_poses[i], input, target))
                .collect();
            let best = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !best.is_finite() {
                return Err(Error::DegenerateAncestors.at_step(t));
            }
            let live: Vec<usize> = (0..n)
                .filter(|&i| base[i].is_finite() && base[i] >= best - options.prune_nats)
                .collect();
            let a_ref = if live.len() == 1 {
                live[0]
            } else {
                let mut logw = vec![f64::NEG_INFINITY; n];
                for &i in &live {
                    let fl = candidate_future_loglik(
                        model,
                        options.future,
                        &beliefs[i],
                        trackers.as_ref().map(|v| &v[i]),
                        ref_info.as_ref(),
                        r,
                        ys,
                        t,
                    )
                    .map_err(|e| e.at_step(t))?;
                    logw[i] = base[i] + fl;
                }
                let probs = normalize_log_weights(&logw).map_err(|_| Error::DegenerateAncestors.at_step(t))?;
                sample_index(&probs, &mut substream(seed, Stream::Ancestor, kk, t as u64, 0))?
            };
            if a_ref != n - 1 {
                switches += 1;
            }
            anc.push(a_ref);
            poses.push(*target);
        }

        beliefs = reassign(beliefs, &anc);
        if let Some(tr) = trackers.take() {
            trackers = Some(reassign(tr, &anc));
        }

        let step = weigh(model, &poses, &beliefs, &ys[t]).map_err(|e| e.at_step(t))?;
        let weights = normalize_log_weights(&step.logw).map_err(|e| e.at_step(t))?;
        log_evidence += log_sum_exp(&step.logw) - (n as f64).ln();
        for (b, innov) in beliefs.iter_mut().zip(&step.innovations) {
            if let Some(innov) = innov {
                b.apply(innov);
            }
        }

        if let (Some(trs), Some(r), Some(info)) = (trackers.as_mut(), reference, ref_info.as_ref()) {
            if t + 1 < t_len {
                let zero = DVector::zeros(model.map_dim());
                let ref_obs = model.observe(&r[t], &zero, &ys[t]);
                for i in 0..n {
                    trs[i]
                        .advance(
                            step.observations[i].as_ref(),
                            step.innovations[i].as_ref(),
                            ref_obs.as_ref(),
                            poses[i] == r[t],
                            &beliefs[i],
                            info.from_step(t + 1),
                        )
                        .map_err(|e| e.at_step(t))?;
                }
            }
        }

        filtering_means.push(weighted_mean(&poses, &weights));
        genealogy.poses.push(poses);
        genealogy.ancestors.push(anc);
        genealogy.weights.push(weights);
    }

    let weights = genealogy.weights[t_len - 1].clone();
    Ok(FilterOutput {
        genealogy,
        particles: ParticleSet { beliefs, weights },
        filtering_means,
        log_evidence,
        ancestor_switches: switches,
    })
}

/// Bootstrap particle filter on a known map: weights come from the
/// predictive likelihood under the fixed `map` (its covariance may be zero),
/// which is never updated. `initial` holds the particle cloud at step 0.
pub fn localize_known_map<D, M>(
    dynamics: &D,
    model: &M,
    map: &GaussianMapBelief,
    inputs: &[D::Input],
    measurements: &[M::Measurement],
    initial: Vec<D::Pose>,
    seed: u64,
) -> Result<FilterOutput<D::Pose>>
where
    D: MotionModel,
    M: MeasurementModel<Pose = D::Pose>,
{
    let n = initial.len();
    let t_len = measurements.len();
    if n == 0 || t_len == 0 {
        return Err(Error::InvalidArgument("localization needs particles and measurements".into()));
    }
    if inputs.len() + 1 != t_len {
        return Err(Error::LengthMismatch {
            left: inputs.len() + 1,
            right: t_len,
        });
    }
    let fixed = vec![map.clone(); 1];
    let loglik = |poses: &[D::Pose], y: &M::Measurement| -> Result<Vec<f64>> {
        poses
            .iter()
            .map(|x| match model.observe(x, &fixed[0].mean, y) {
                Some(obs) => Ok(fixed[0].innovation(&obs.c, &obs.sigma, &obs.y)?.loglik()),
                None => Ok(0.0),
            })
            .collect()
    };
    let logw = loglik(&initial, &measurements[0]).map_err(|e| e.at_step(0))?;
    let w0 = normalize_log_weights(&logw).map_err(|e| e.at_step(0))?;
    let mut log_evidence = log_sum_exp(&logw) - (n as f64).ln();
    let mut genealogy = Genealogy {
        poses: vec![initial],
        ancestors: vec![(0..n).collect()],
        weights: vec![w0],
    };
    let mut filtering_means = vec![weighted_mean(&genealogy.poses[0], &genealogy.weights[0])];
    for t in 1..t_len {
        let anc = systematic_resample(&genealogy.weights[t - 1], n, &mut substream(seed, Stream::Resample, 0, t as u64, 0))
            .map_err(|e| e.at_step(t))?;
        let prev = &genealogy.poses[t - 1];
        let poses: Vec<D::Pose> = anc
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let mut rng = substream(seed, Stream::Propagate, 0, t as u64, i as u64);
                dynamics.propagate(&prev[a], &inputs[t - 1], &mut rng)
            })
            .collect();
        let logw = loglik(&poses, &measurements[t]).map_err(|e| e.at_step(t))?;
        let w = normalize_log_weights(&logw).map_err(|e| e.at_step(t))?;
        log_evidence += log_sum_exp(&logw) - (n as f64).ln();
        filtering_means.push(weighted_mean(&poses, &w));
        genealogy.poses.push(poses);
        genealogy.ancestors.push(anc);
        genealogy.weights.push(w);
    }
    let weights = genealogy.weights[t_len - 1].clone();
    Ok(FilterOutput {
        genealogy,
        particles: ParticleSet {
            beliefs: Vec::new(),
            weights,
        },
        filtering_means,
        log_evidence,
        ancestor_switches: 0,
    })
}

