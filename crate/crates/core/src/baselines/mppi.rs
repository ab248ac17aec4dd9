use std::time::Instant;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BaselineOutcome;
use crate::env::{first_collision, penetration_step, BoxEnvironment};
use crate::error::{Error, Result};
use crate::nfg::{Boundary, IterationTrace};
use crate::rng::StreamKey;
use crate::trajectory::{TimeGrid, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MppiConfig {
    pub rollouts: usize,
    pub iterations: usize,
    pub temperature: f64,
    /// Standard deviation of each Wiener increment.
    pub noise_scale: f64,
    pub goal: f64,
    pub weight_obs: f64,
    pub weight_goal: f64,
    pub early_stop: bool,
    pub boundary: Boundary,
}

impl Default for MppiConfig {
    fn default() -> Self {
        Self {
            rollouts: 100,
            iterations: 100,
            temperature: 1.0,
            noise_scale: 0.1 * 0.01f64.sqrt(),
            goal: 0.0,
            weight_obs: 1.0,
            weight_goal: 1.0,
            early_stop: false,
            boundary: Boundary::default(),
        }
    }
}

impl MppiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts < 2 {
            return Err(Error::config("MPPI needs at least 2 rollouts"));
        }
        if self.iterations == 0 {
            return Err(Error::config("MPPI needs at least one iteration"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config(format!("MPPI temperature must be positive, got {}", self.temperature)));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::config("MPPI noise scale must be non-negative"));
        }
        if !(self.weight_obs >= 0.0 && self.weight_goal >= 0.0) {
            return Err(Error::config("MPPI cost weights must be non-negative"));
        }
        Ok(())
    }
}

/// Cumulative sums of i.i.d. Gaussian increments. The first grid point carries
/// no noise, so `Var[ε_t] = t · scale²` for grid index `t`.
#[derive(Debug, Clone, Copy)]
pub struct WienerSampler {
    scale: f64,
    key: StreamKey,
}

impl WienerSampler {
    pub fn new(scale: f64, key: StreamKey) -> Self {
        Self { scale, key }
    }

    pub fn draw(&self, iteration: u64, index: u64, steps: usize, dims: usize) -> DMatrix<f64> {
        let mut rng = self.key.rng(iteration, index);
        let mut eps = DMatrix::zeros(steps, dims);
        for d in 0..dims {
            for t in 1..steps {
                let inc: f64 = StandardNormal.sample(&mut rng);
                eps[(t, d)] = eps[(t - 1, d)] + self.scale * inc;
            }
        }
        eps
    }
}

/// `weight_obs · Σ_t depth_t + weight_goal · Σ_t (y_t - goal)²` over the first dimension.
pub fn mppi_cost(env: &BoxEnvironment, grid: &TimeGrid, values: &DMatrix<f64>, cfg: &MppiConfig) -> f64 {
    values
        .column(0)
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let obs = -penetration_step(env, grid.time(k), *y);
            cfg.weight_obs * obs + cfg.weight_goal * (y - cfg.goal) * (y - cfg.goal)
        })
        .sum()
}

fn softmin_weights(costs: &[f64], temperature: f64) -> Vec<f64> {
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = costs.iter().map(|c| (-(c - lo) / temperature).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Whole-horizon iterated MPPI: every iteration perturbs the full trajectory with
/// Wiener noise and moves it by the softmin-weighted mean perturbation.
pub fn mppi_optimize(
    y0: &Trajectory,
    env: &BoxEnvironment,
    cfg: &MppiConfig,
    sampler: &WienerSampler,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let grid = *y0.grid();
    let (steps, dims) = y0.values().shape();
    let mut y = y0.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let feasible = |v: &DMatrix<f64>| first_collision(env, &grid, v.column(0).as_slice()).is_none();
    for k in 0..cfg.iterations {
        if cfg.early_stop && feasible(y.values()) {
            break;
        }
        let started = Instant::now();
        let rollouts: Vec<(DMatrix<f64>, f64)> = (0..cfg.rollouts as u64)
            .into_par_iter()
            .map(|r| {
                let eps = sampler.draw(k as u64, r, steps, dims);
                let cost = mppi_cost(env, &grid, &(y.values() + &eps), cfg);
                (eps, cost)
            })
            .collect();
        let costs: Vec<f64> = rollouts.iter().map(|(_, c)| *c).collect();
        let weights = softmin_weights(&costs, cfg.temperature);
        let mut update: DMatrix<f64> = DMatrix::zeros(steps, dims);
        for ((eps, _), w) in rollouts.iter().zip(&weights) {
            update += eps * *w;
        }
        let mut values = y.values() + &update;
        cfg.boundary.apply(&mut values, y.values());
        y = Trajectory::new(grid, values)?;
        trace.push(IterationTrace {
            iteration: k,
            best_score: -costs.iter().copied().fold(f64::INFINITY, f64::min),
            mean_weight: 1.0 / cfg.rollouts as f64,
            estimator_norm: update.norm(),
            feasible: feasible(y.values()),
            wall_time: started.elapsed().as_secs_f64(),
        });
    }
    let iterations_used = trace.len();
    Ok(BaselineOutcome { trajectory: y, trace, iterations_used })
}
