//! Natural functional gradient ascent.
//!
//! Each iteration draws `B` smooth perturbations `ε⁽ˢ⁾ = σ L z⁽ˢ⁾`, scores the
//! perturbed trajectories, and forms the Monte-Carlo estimate
//!
//! ```text
//! ĝ = 1/(B σ²) Σ_s exp(N_pow f(μ + ε⁽ˢ⁾)) ε⁽ˢ⁾
//! ```
//!
//! which, in expectation, equals `K_λ ∇F(μ)` for the Gaussian-smoothed objective
//! `F(μ) = E[exp(N_pow f(μ + ε))]`. The mean then moves along `ĝ`.
//!
//! Two weight modes exist. `Raw` is the estimator as written (exponent clamped to
//! ±700). `Shifted` subtracts the per-batch maximum exponent first, which scales
//! `ĝ` by a positive per-iteration constant and keeps every weight in `[0, 1]`.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{Objective, EXP_CLAMP};
use crate::error::{Error, Result};
use crate::kernel::PerturbationSampler;
use crate::trajectory::{format_full, Trajectory};

/// Added to the estimator norm before normalizing a step.
pub const NORM_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Raw,
    #[default]
    Shifted,
}

/// Step sizes `η_k`. A list shorter than the iteration count repeats its last entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSchedule {
    Constant(f64),
    List(Vec<f64>),
}

impl StepSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSchedule::Constant(eta) => *eta,
            StepSchedule::List(etas) => etas[k.min(etas.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            StepSchedule::Constant(eta) => eta.is_finite() && *eta > 0.0,
            StepSchedule::List(etas) => !etas.is_empty() && etas.iter().all(|e| e.is_finite() && *e > 0.0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config("step sizes must be positive and finite"))
        }
    }
}

/// Which boundary grid points are held at their initial values after every update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Boundary {
    pub pin_start: bool,
    pub pin_goal: bool,
}

impl Default for Boundary {
    fn default() -> Self {
        Self { pin_start: true, pin_goal: false }
    }
}

impl Boundary {
    /// Copies the pinned rows of `anchor` into `values`.
    pub fn apply(&self, values: &mut DMatrix<f64>, anchor: &DMatrix<f64>) {
        let last = values.nrows() - 1;
        if self.pin_start {
            values.set_row(0, &anchor.row(0));
        }
        if self.pin_goal {
            values.set_row(last, &anchor.row(last));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NfgConfig {
    /// Set from the shared perturbation block when loaded from a benchmark file.
    #[serde(skip_deserializing)]
    pub sigma: f64,
    /// Set from the score block when loaded from a benchmark file.
    #[serde(skip_deserializing)]
    pub n_pow: f64,
    pub batch: usize,
    pub iterations: usize,
    pub step_sizes: StepSchedule,
    /// Divide the estimate by its norm before stepping.
    pub normalize: bool,
    pub early_stop: bool,
    pub weight_mode: WeightMode,
    pub boundary: Boundary,
}

impl Default for NfgConfig {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            n_pow: 100.0,
            batch: 100,
            iterations: 100,
            step_sizes: StepSchedule::Constant(0.1),
            normalize: true,
            early_stop: true,
            weight_mode: WeightMode::Shifted,
            boundary: Boundary::default(),
        }
    }
}

impl NfgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.n_pow.is_finite() && self.n_pow > 0.0) {
            return Err(Error::config(format!("n_pow must be positive, got {}", self.n_pow)));
        }
        if self.batch == 0 || self.iterations == 0 {
            return Err(Error::config("batch and iterations must be at least 1"));
        }
        self.step_sizes.validate()
    }
}

/// One record per completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub best_score: f64,
    pub mean_weight: f64,
    pub estimator_norm: f64,
    pub feasible: bool,
    pub wall_time: f64,
}

#[derive(Debug, Clone)]
pub struct GradientEstimate {
    pub direction: DMatrix<f64>,
    pub best_score: f64,
    pub mean_weight: f64,
    pub norm: f64,
}

/// Sample weights from objective scores. In `Shifted` mode the largest finite
/// weight is exactly 1.
pub fn sample_weights(scores: &[f64], n_pow: f64, mode: WeightMode) -> Vec<f64> {
    match mode {
        WeightMode::Raw => scores
            .iter()
            .map(|f| if *f == f64::NEG_INFINITY { 0.0 } else { (n_pow * f).clamp(-EXP_CLAMP, EXP_CLAMP).exp() })
            .collect(),
        WeightMode::Shifted => {
            let top = scores.iter().copied().filter(|f| f.is_finite()).fold(f64::NEG_INFINITY, f64::max);
            if top == f64::NEG_INFINITY {
                return vec![0.0; scores.len()];
            }
            scores.iter().map(|f| if f.is_finite() { (n_pow * (f - top)).exp() } else { 0.0 }).collect()
        }
    }
}

/// Monte-Carlo natural-gradient estimate at `mu` using draws of `iteration`.
/// Objective evaluations run in parallel; the weighted sum is accumulated in draw
/// order so the result does not depend on the thread count.
pub fn estimate_gradient<O: Objective + ?Sized>(
    mu: &DMatrix<f64>,
    objective: &O,
    sampler: &PerturbationSampler,
    cfg: &NfgConfig,
    iteration: usize,
) -> Result<GradientEstimate> {
    if mu.nrows() != sampler.factor().size() {
        return Err(Error::precondition(format!(
            "mean has {} grid points but the covariance factor has size {}",
            mu.nrows(),
            sampler.factor().size()
        )));
    }
    let dims = mu.ncols();
    let draws: Vec<(DMatrix<f64>, f64)> = (0..cfg.batch as u64)
        .into_par_iter()
        .map(|s| {
            let eps = sampler.draw(iteration as u64, s, dims);
            let score = objective.score(&(mu + &eps));
            (eps, score)
        })
        .collect();
    let scores: Vec<f64> = draws.iter().map(|(_, f)| *f).collect();
    let weights = sample_weights(&scores, cfg.n_pow, cfg.weight_mode);
    if weights.iter().all(|w| *w == 0.0) {
        return Err(Error::DegenerateBatch { iteration });
    }
    let mut direction: DMatrix<f64> = DMatrix::zeros(mu.nrows(), dims);
    for ((eps, _), w) in draws.iter().zip(&weights) {
        if *w != 0.0 {
            direction += eps * *w;
        }
    }
    direction /= cfg.batch as f64 * cfg.sigma * cfg.sigma;
    let norm = direction.norm();
    Ok(GradientEstimate {
        direction,
        best_score: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_weight: weights.iter().sum::<f64>() / weights.len() as f64,
        norm,
    })
}

/// `μ + η · direction`, then the pinned boundary rows of `mu` are restored.
pub fn step(mu: &Trajectory, direction: &DMatrix<f64>, eta: f64, boundary: &Boundary) -> Result<Trajectory> {
    if direction.shape() != mu.values().shape() {
        return Err(Error::precondition(format!(
            "direction shape {:?} does not match trajectory shape {:?}",
            direction.shape(),
            mu.values().shape()
        )));
    }
    let mut values = mu.values() + direction * eta;
    boundary.apply(&mut values, mu.values());
    Trajectory::new(*mu.grid(), values)
}

#[derive(Debug, Clone)]
pub struct NfgOutcome {
    pub trajectory: Trajectory,
    pub trace: Vec<IterationTrace>,
    /// Number of iterations whose estimate was computed (skipped ones included).
    pub iterations_used: usize,
    /// Iteration at which early stopping found a feasible mean.
    pub stopped_at: Option<usize>,
    /// Iterations whose batch was degenerate and left the mean unchanged.
    pub skipped: Vec<usize>,
}

/// Runs the ascent loop from `mu0`.
pub fn optimize<O: Objective + ?Sized>(
    mu0: &Trajectory,
    objective: &O,
    sampler: &PerturbationSampler,
    cfg: &NfgConfig,
) -> Result<NfgOutcome> {
    cfg.validate()?;
    if sampler.sigma() != cfg.sigma {
        return Err(Error::config(format!(
            "sampler noise scale {} differs from configured sigma {}",
            sampler.sigma(),
            cfg.sigma
        )));
    }
    let mut mu = mu0.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut skipped = Vec::new();
    let mut stopped_at = None;
    let mut iterations_used = 0;
    for k in 0..cfg.iterations {
        if cfg.early_stop && objective.is_feasible(mu.values()) {
            stopped_at = Some(k);
            break;
        }
        let started = Instant::now();
        iterations_used += 1;
        match estimate_gradient(mu.values(), objective, sampler, cfg, k) {
            Ok(est) => {
                let direction = if cfg.normalize { &est.direction / (est.norm + NORM_GUARD) } else { est.direction };
                mu = step(&mu, &direction, cfg.step_sizes.at(k), &cfg.boundary)?;
                trace.push(IterationTrace {
                    iteration: k,
                    best_score: est.best_score,
                    mean_weight: est.mean_weight,
                    estimator_norm: est.norm,
                    feasible: objective.is_feasible(mu.values()),
                    wall_time: started.elapsed().as_secs_f64(),
                });
            }
            Err(Error::DegenerateBatch { iteration }) => {
                log::warn!("degenerate batch at iteration {iteration}, keeping the current mean");
                skipped.push(iteration);
                trace.push(IterationTrace {
                    iteration: k,
                    best_score: f64::NEG_INFINITY,
                    mean_weight: 0.0,
                    estimator_norm: 0.0,
                    feasible: objective.is_feasible(mu.values()),
                    wall_time: started.elapsed().as_secs_f64(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    if stopped_at.is_none() && cfg.early_stop && objective.is_feasible(mu.values()) {
        stopped_at = Some(cfg.iterations);
    }
    Ok(NfgOutcome { trajectory: mu, trace, iterations_used, stopped_at, skipped })
}

/// Writes `[method,]iter,best_score,mean_weight,grad_norm,feasible,wall_time_s`.
pub fn write_trace_csv<W: Write>(writer: W, method: Option<&str>, trace: &[IterationTrace]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = Vec::new();
    if method.is_some() {
        header.push("method");
    }
    header.extend(["iter", "best_score", "mean_weight", "grad_norm", "feasible", "wall_time_s"]);
    out.write_record(&header)?;
    for rec in trace {
        let mut row = Vec::new();
        if let Some(m) = method {
            row.push(m.to_string());
        }
        row.extend([
            rec.iteration.to_string(),
            format_full(rec.best_score),
            format_full(rec.mean_weight),
            format_full(rec.estimator_norm),
            rec.feasible.to_string(),
            format!("{:.6}", rec.wall_time),
        ]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
