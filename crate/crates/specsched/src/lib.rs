//! Closed-form spectral analysis of discrete diffusion samplers under a
//! Gaussian data model, and optimization of their noise schedules.
//!
//! Everything is expressed in the eigenbasis of the data covariance, where
//! the Wiener-optimal denoiser, the DDIM/DDPM reverse recursions and the
//! resulting output distribution are all diagonal. See [`spectral`] for the
//! transfer function, [`losses`] for distances to the target and
//! [`optimize`] for the schedule solver.

mod dual;
pub mod error;
pub mod estimate;
pub mod io;
pub mod losses;
pub mod model;
pub mod optimize;
pub mod rng;
pub mod schedules;
pub mod simulate;
pub mod spectral;

pub use error::{Error, Result};
pub use losses::LossKind;
pub use model::{
    Formulation, GaussianDiag, Process, Schedule, SpectralModel, Transfer, VeSchedule,
    DEFAULT_EPS0, DEFAULT_EPS_S, LAMBDA_FLOOR,
};
