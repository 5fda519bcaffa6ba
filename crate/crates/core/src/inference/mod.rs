//! Particle filtering and smoothing over trajectories with Rao-Blackwellized
//! Gaussian maps.

mod filter;
mod future;
mod resample;

pub use filter::{
    ancestor_weights_ref, crbpf_as_filter, crbpf_as_run, localize_known_map, mcmc_smoother_run, rbpf_as_run,
    FilterOptions, FilterOutput, FutureMethod, Genealogy, ParticleSet, SlamProblem, SmootherOutput, SmootherSample,
};
pub use future::{
    chol_rank_one, future_loglik_dense, future_loglik_info, future_loglik_sequential, predictive_loglik, InfoTracker,
    ReferenceInfo,
};
pub use resample::{reassign, sample_index, systematic_resample};
