//! Comparison optimizers for the synthetic benchmark: STOMP-style stochastic
//! reweighting, CHOMP-style analytic penetration gradients and MPPI-style
//! Wiener-noise rollouts. All of them minimize a cost rather than maximize the
//! score, and all share the boundary pinning rule of the NFG optimizer.

pub mod chomp;
pub mod mppi;
pub mod stomp;

pub use chomp::{chomp_gradient, chomp_optimize, ChompConfig, ChompMetric};
pub use mppi::{mppi_cost, mppi_optimize, MppiConfig, WienerSampler};
pub use stomp::{stomp_iterate, stomp_optimize, stomp_weights, StompConfig};

use crate::nfg::IterationTrace;
use crate::trajectory::Trajectory;

/// Guards normalizations against zero spreads and zero norms.
pub const SPREAD_GUARD: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub trajectory: Trajectory,
    pub trace: Vec<IterationTrace>,
    pub iterations_used: usize,
}
