//! Rao-Blackwellized particle filtering and MCMC particle smoothing for
//! simultaneous localization and mapping.
//!
//! The map is a Gaussian random vector `θ` that enters the measurement model
//! (conditionally) linearly, `y = C(x) θ + ε`. Each particle carries the exact
//! Gaussian posterior of `θ` given its own trajectory, so only the poses are
//! sampled. Three map models are provided:
//!
//! * a scalar radio (RSSI) field with a reduced-rank GP prior,
//! * a curl-free magnetic field modelled as the gradient of a GP potential,
//! * sparse planar landmarks observed by a 1D pinhole camera (linearized).
//!
//! On top of the forward filter sits a conditional filter with ancestor
//! sampling that acts as the Markov kernel of an MCMC smoother over the
//! joint trajectory/map posterior.

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod gpmap;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod rng;
pub mod sensors;
pub mod simulation;

pub use error::{Error, Result};
pub use geometry::{
    MotionModel, OdometryFrame, PlanarMotion, PlanarOdometry, PlanarStep, Pose3D, PoseLike,
    PosePlanar, ProcessNoise3D, ProcessNoisePlanar, SpatialMotion, SpatialOdometry, SpatialStep,
};
pub use gpmap::{BasisDomain, GaussianMapBelief, KernelHyper, MapKind};
pub use inference::{
    mcmc_smoother_run, rbpf_as_run, FilterOutput, Genealogy, ParticleSet, SmootherSample,
};
pub use sensors::{
    Camera, LinearizedObservation, MagneticModel, MeasurementModel, RadioModel, VisualMeasurement,
    Visual2dModel,
};
