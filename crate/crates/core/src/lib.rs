//! Exact stochastic simulation and large-population theory for two
//! competing selective sweeps in a two-locus Moran model.
//!
//! - [`moran`]: the four-haplotype continuous-time chain.
//! - [`scenarios`]: initial conditions and single fixation trials.
//! - [`deterministic`]: logistic curves and the phase constants.
//! - [`forward`]: forward equations of the approximating birth-death
//!   process and the resulting fixation probability.
//! - [`branching`]: branching-process generating functions and the
//!   heuristic estimators for the other regimes.
//! - [`harness`]: reproducible Monte Carlo estimation and sweeps.

pub mod branching;
pub mod deterministic;
pub mod error;
pub mod forward;
pub mod harness;
pub mod moran;
pub mod quadrature;
pub mod rng;
pub mod scenarios;

pub use error::{Result, SweepError};
pub use moran::{Haplotype, ModelParams, PopulationState};
