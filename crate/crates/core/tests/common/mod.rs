#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nfg_core::kernel::{factorize, kernel_matrix_at};
use nfg_core::nfg::{estimate_gradient, Boundary, NfgConfig, StepSchedule, WeightMode};
use nfg_core::{CovarianceFactor, Objective, PerturbationSampler, SEKernel, TimeGrid, Trajectory};

pub const VARIANCE: f64 = 0.29;
pub const LENGTH_SCALE: f64 = 0.22;

/// `f(ξ) = aᵀξ` on the first dimension.
pub struct Linear(pub DVector<f64>);

impl Objective for Linear {
    fn score(&self, values: &DMatrix<f64>) -> f64 {
        self.0.dot(&values.column(0))
    }
}

pub struct Constant(pub f64);

impl Objective for Constant {
    fn score(&self, _: &DMatrix<f64>) -> f64 {
        self.0
    }
}

/// `f(ξ) = -‖ξ - c‖² / 2`, so `exp(f)` is a smooth bounded Gaussian bump.
pub struct Bump(pub DVector<f64>);

impl Objective for Bump {
    fn score(&self, values: &DMatrix<f64>) -> f64 {
        -0.5 * (values.column(0) - &self.0).norm_squared()
    }
}

/// Grid times `k / m` for `k = 0..m`.
pub fn times(m: usize) -> Vec<f64> {
    (0..m).map(|k| k as f64 / m as f64).collect()
}

pub fn factor(m: usize) -> Arc<CovarianceFactor> {
    let kernel = SEKernel::new(VARIANCE, LENGTH_SCALE).unwrap();
    Arc::new(factorize(&kernel_matrix_at(&times(m), &kernel), kernel.default_reg()).unwrap())
}

pub fn sampler(factor: &Arc<CovarianceFactor>, sigma: f64, seed: u64) -> PerturbationSampler {
    PerturbationSampler::new(Arc::clone(factor), sigma, seed, 17).unwrap()
}

pub fn raw_config(sigma: f64, n_pow: f64, batch: usize) -> NfgConfig {
    NfgConfig { sigma, n_pow, batch, weight_mode: WeightMode::Raw, ..NfgConfig::default() }
}

/// `E[ĝ] = N F(μ) K_λ a` with `F(μ) = exp(N aᵀμ + N² σ² aᵀK_λa / 2)`.
pub fn linear_oracle(
    k_reg: &DMatrix<f64>,
    a: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: f64,
    n_pow: f64,
) -> DVector<f64> {
    let quad = a.dot(&(k_reg * a));
    let big_f = (n_pow * a.dot(mu) + 0.5 * n_pow * n_pow * sigma * sigma * quad).exp();
    k_reg * a * (n_pow * big_f)
}

/// `K_λ ∇F(μ)` for the bump with `F(μ) = E[exp(-‖μ + ε - c‖²/2)]`, `ε ~ N(0, Σ)`:
/// `F = det(I + Σ)^(-1/2) exp(-dᵀ(I + Σ)⁻¹d / 2)` and `∇F = -(I + Σ)⁻¹ d F`.
pub fn bump_oracle(k_reg: &DMatrix<f64>, c: &DVector<f64>, mu: &DVector<f64>, sigma: f64) -> DVector<f64> {
    let m = c.len();
    let a = DMatrix::identity(m, m) + k_reg * (sigma * sigma);
    let chol = a.clone().cholesky().unwrap();
    let d = mu - c;
    let solved = chol.solve(&d);
    let big_f = a.determinant().powf(-0.5) * (-0.5 * d.dot(&solved)).exp();
    k_reg * (-solved * big_f)
}

/// Mean of `count` independent estimates of `ĝ` at `mu`, one batch per iteration index.
pub fn mean_estimate<O: Objective>(
    mu: &DVector<f64>,
    objective: &O,
    sampler: &PerturbationSampler,
    cfg: &NfgConfig,
    count: usize,
) -> DVector<f64> {
    let mu = DMatrix::from_column_slice(mu.len(), 1, mu.as_slice());
    let mut acc = DVector::zeros(mu.nrows());
    for k in 0..count {
        let est = estimate_gradient(&mu, objective, sampler, cfg, k).unwrap();
        acc += est.direction.column(0);
    }
    acc / count as f64
}

pub fn relative_error(estimate: &DVector<f64>, reference: &DVector<f64>) -> f64 {
    (estimate - reference).norm() / reference.norm()
}

/// Stein check: the raw-mode estimate at `B` samples against `K_λ` times the
/// central finite-difference gradient of the smoothed objective, both using
/// the same perturbations. Returns the estimate, the reference and the factor.
pub fn stein_pair(
    m: usize,
    sigma: f64,
    batch: usize,
    seed: u64,
) -> (DVector<f64>, DVector<f64>, Arc<CovarianceFactor>) {
    let f = factor(m);
    let s = sampler(&f, sigma, seed);
    let c = DVector::from_fn(m, |i, _| [0.3, -0.2, 0.5][i % 3]);
    let objective = Bump(c);
    let mu = DVector::zeros(m);
    let cfg = raw_config(sigma, 1.0, batch);
    let estimate = mean_estimate(&mu, &objective, &s, &cfg, 1);

    let eps = s.sample(0, batch, 1);
    let smoothed = |x: &DVector<f64>| {
        let x = DMatrix::from_column_slice(m, 1, x.as_slice());
        eps.iter().map(|e| objective.score(&(&x + e)).exp()).sum::<f64>() / batch as f64
    };
    let h = 1e-4;
    let grad = DVector::from_fn(m, |i, _| {
        let mut up = mu.clone();
        let mut down = mu.clone();
        up[i] += h;
        down[i] -= h;
        (smoothed(&up) - smoothed(&down)) / (2.0 * h)
    });
    let reference = f.regularized() * grad;
    (estimate, reference, f)
}

/// Iterations of normalized shifted-weight ascent on `f = mean(ξ)` until
/// `mean(μ) ≥ threshold`, starting from zero on an `m`-point grid.
pub fn iterations_to_threshold(m: usize, batch: usize, seed: u64, threshold: f64, cap: usize) -> usize {
    let grid = TimeGrid::new(1.0, m as f64).unwrap();
    let f = factor(m);
    let s = sampler(&f, 0.5, seed);
    let a = DVector::from_element(m, 1.0 / m as f64);
    let objective = Linear(a.clone());
    let cfg = NfgConfig {
        sigma: 0.5,
        n_pow: 10.0,
        batch,
        iterations: 1,
        step_sizes: StepSchedule::Constant(0.1),
        normalize: true,
        early_stop: false,
        weight_mode: WeightMode::Shifted,
        boundary: Boundary { pin_start: false, pin_goal: false },
    };
    let mut mu = Trajectory::zeros(grid, 1);
    for k in 0..cap {
        if a.dot(&mu.values().column(0)) >= threshold {
            return k;
        }
        let est = estimate_gradient(mu.values(), &objective, &s, &cfg, k).unwrap();
        let dir = &est.direction / (est.norm + nfg_core::nfg::NORM_GUARD);
        mu = nfg_core::nfg::step(&mu, &dir, 0.1, &cfg.boundary).unwrap();
    }
    cap
}

pub fn median(mut v: Vec<usize>) -> usize {
    v.sort_unstable();
    v[v.len() / 2]
}
