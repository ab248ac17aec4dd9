use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BaselineOutcome, SPREAD_GUARD};
use crate::env::Objective;
use crate::error::{Error, Result};
use crate::kernel::PerturbationSampler;
use crate::nfg::{Boundary, IterationTrace};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StompConfig {
    pub batch: usize,
    pub iterations: usize,
    /// Sharpness `h` of the min-max normalized exponential reweighting.
    pub temperature: f64,
    pub early_stop: bool,
    pub boundary: Boundary,
}

impl Default for StompConfig {
    fn default() -> Self {
        Self { batch: 100, iterations: 100, temperature: 10.0, early_stop: false, boundary: Boundary::default() }
    }
}

impl StompConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 2 {
            return Err(Error::config("STOMP needs a batch of at least 2"));
        }
        if self.iterations == 0 {
            return Err(Error::config("STOMP needs at least one iteration"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config(format!("STOMP temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// `w_s ∝ exp(-h (J_s - J_min) / (J_max - J_min + δ))`, normalized to sum 1.
pub fn stomp_weights(costs: &[f64], temperature: f64) -> Vec<f64> {
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = hi - lo + SPREAD_GUARD;
    let raw: Vec<f64> = costs.iter().map(|c| (-temperature * (c - lo) / spread).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// One STOMP update: `y + Σ_s w_s ε⁽ˢ⁾` over the costs `J = 1 - f(y + ε)`.
pub fn stomp_iterate<O: Objective + ?Sized>(
    y: &Trajectory,
    objective: &O,
    cfg: &StompConfig,
    sampler: &PerturbationSampler,
    iteration: usize,
) -> Result<(Trajectory, IterationTrace)> {
    if y.values().nrows() != sampler.factor().size() {
        return Err(Error::precondition("trajectory and covariance factor sizes differ"));
    }
    let started = Instant::now();
    let dims = y.dims();
    let draws: Vec<(DMatrix<f64>, f64)> = (0..cfg.batch as u64)
        .into_par_iter()
        .map(|s| {
            let eps = sampler.draw(iteration as u64, s, dims);
            let cost = 1.0 - objective.score(&(y.values() + &eps));
            (eps, cost)
        })
        .collect();
    let costs: Vec<f64> = draws.iter().map(|(_, c)| *c).collect();
    let weights = stomp_weights(&costs, cfg.temperature);
    let mut update: DMatrix<f64> = DMatrix::zeros(y.values().nrows(), dims);
    for ((eps, _), w) in draws.iter().zip(&weights) {
        update += eps * *w;
    }
    let mut values = y.values() + &update;
    cfg.boundary.apply(&mut values, y.values());
    let next = Trajectory::new(*y.grid(), values)?;
    let trace = IterationTrace {
        iteration,
        best_score: 1.0 - costs.iter().copied().fold(f64::INFINITY, f64::min),
        mean_weight: 1.0 / cfg.batch as f64,
        estimator_norm: update.norm(),
        feasible: objective.is_feasible(next.values()),
        wall_time: started.elapsed().as_secs_f64(),
    };
    Ok((next, trace))
}

pub fn stomp_optimize<O: Objective + ?Sized>(
    y0: &Trajectory,
    objective: &O,
    cfg: &StompConfig,
    sampler: &PerturbationSampler,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let mut y = y0.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        if cfg.early_stop && objective.is_feasible(y.values()) {
            break;
        }
        let (next, rec) = stomp_iterate(&y, objective, cfg, sampler, k)?;
        y = next;
        trace.push(rec);
    }
    let iterations_used = trace.len();
    Ok(BaselineOutcome { trajectory: y, trace, iterations_used })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{BoxEnvironment, BoxObjective, ScoreConfig};
    use crate::kernel::{factorize, kernel_matrix, SEKernel};
    use crate::trajectory::TimeGrid;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn sampler(grid: &TimeGrid, seed: u64) -> PerturbationSampler {
        let kernel = SEKernel::new(0.29, 0.22).unwrap();
        let f = factorize(&kernel_matrix(grid, &kernel), kernel.default_reg()).unwrap();
        PerturbationSampler::new(Arc::new(f), 1.0, seed, 9).unwrap()
    }

    #[test]
    fn equal_costs_give_uniform_weights() {
        let w = stomp_weights(&[0.4; 5], 10.0);
        assert!(w.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn equal_costs_step_by_the_sample_mean() {
        struct Flat;
        impl Objective for Flat {
            fn score(&self, _: &DMatrix<f64>) -> f64 {
                0.5
            }
        }
        let g = TimeGrid::new(1.0, 10.0).unwrap();
        let s = sampler(&g, 3);
        let cfg = StompConfig {
            batch: 4,
            boundary: Boundary { pin_start: false, pin_goal: false },
            ..StompConfig::default()
        };
        let y = Trajectory::zeros(g, 1);
        let (next, _) = stomp_iterate(&y, &Flat, &cfg, &s, 0).unwrap();
        let mean = s.sample(0, 4, 1).iter().fold(DMatrix::zeros(10, 1), |acc, e| acc + e) / 4.0;
        assert!((next.values() - mean).amax() < 1e-12);
    }

    #[test]
    fn sharp_temperature_selects_the_best_sample() {
        let w = stomp_weights(&[0.9, 0.1, 0.5], 1e4);
        assert!((w[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_of_one_is_rejected() {
        assert!(StompConfig { batch: 1, ..StompConfig::default() }.validate().is_err());
    }

    #[test]
    fn start_point_stays_pinned() {
        let g = TimeGrid::new(1.0, 100.0).unwrap();
        let objective = BoxObjective::new(BoxEnvironment::narrow_passage(), g, ScoreConfig::default());
        let y0 = Trajectory::zeros(g, 1);
        let cfg = StompConfig { iterations: 5, ..StompConfig::default() };
        let out = stomp_optimize(&y0, &objective, &cfg, &sampler(&g, 1)).unwrap();
        assert_eq!(out.trajectory.values()[(0, 0)], 0.0);
        assert_eq!(out.iterations_used, 5);
    }

    proptest! {
        #[test]
        fn weights_form_a_probability_vector(costs in prop::collection::vec(-10.0..10.0f64, 2..50), h in 0.1..50.0f64) {
            let w = stomp_weights(&costs, h);
            prop_assert!(w.iter().all(|v| *v >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
