//! Function-space trajectory optimization with Gaussian smoothing.
//!
//! The crate provides the natural functional gradient (NFG) optimizer, the
//! synthetic narrow-passage benchmark environment, STOMP-, CHOMP- and
//! MPPI-style baselines, and a seeded benchmark harness that scores every
//! method through the same evaluation pipeline.

pub mod baselines;
pub mod bench;
pub mod env;
pub mod error;
pub mod kernel;
pub mod nfg;
pub mod rng;
pub mod trajectory;

pub use env::{BoxEnvironment, BoxObjective, BoxObstacle, Objective, ScoreConfig};
pub use error::{Error, Result};
pub use kernel::{CovarianceFactor, PerturbationSampler, SEKernel};
pub use nfg::{IterationTrace, NfgConfig};
pub use trajectory::{TimeGrid, Trajectory, WaypointPath};
