//! Squared-exponential kernel, the regularized kernel matrix and its Cholesky
//! factor, and smooth Gaussian perturbations `ε = σ L z`.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamKey;
use crate::trajectory::TimeGrid;

/// Relative regularization used when none is configured: `λ = 1e-6 · g²`.
pub const DEFAULT_RELATIVE_REG: f64 = 1e-6;

/// `k(t, t') = g² exp(-|t - t'|² / (2 l²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SEKernel {
    pub variance: f64,
    pub length_scale: f64,
}

impl SEKernel {
    pub fn new(variance: f64, length_scale: f64) -> Result<Self> {
        let k = Self { variance, length_scale };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::config(format!("kernel variance must be positive, got {}", self.variance)));
        }
        if !(self.length_scale.is_finite() && self.length_scale > 0.0) {
            return Err(Error::config(format!("kernel length scale must be positive, got {}", self.length_scale)));
        }
        Ok(())
    }

    pub fn eval(&self, a: f64, b: f64) -> f64 {
        let r = a - b;
        self.variance * (-(r * r) / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    pub fn default_reg(&self) -> f64 {
        DEFAULT_RELATIVE_REG * self.variance
    }
}

/// Kernel matrix over the grid points.
pub fn kernel_matrix(grid: &TimeGrid, kernel: &SEKernel) -> DMatrix<f64> {
    kernel_matrix_at(&grid.times(), kernel)
}

/// Kernel matrix over arbitrary time points. Filled from the upper triangle so
/// the result is exactly symmetric, with the diagonal exactly `g²`.
pub fn kernel_matrix_at(times: &[f64], kernel: &SEKernel) -> DMatrix<f64> {
    let m = times.len();
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        k[(i, i)] = kernel.variance;
        for j in i + 1..m {
            let v = kernel.eval(times[i], times[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Lower-triangular `L` with `L Lᵀ = K + λI`.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    reg: f64,
    regularized: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl CovarianceFactor {
    pub fn size(&self) -> usize {
        self.factor.nrows()
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `K + λI`.
    pub fn regularized(&self) -> &DMatrix<f64> {
        &self.regularized
    }

    /// Largest absolute entry of `L Lᵀ - (K + λI)`.
    pub fn reconstruction_error(&self) -> f64 {
        (&self.factor * self.factor.transpose() - &self.regularized).amax()
    }
}

/// Cholesky factorization of `K + λI`.
pub fn factorize(k: &DMatrix<f64>, reg: f64) -> Result<CovarianceFactor> {
    if !(reg.is_finite() && reg > 0.0) {
        return Err(Error::config(format!("regularization must be positive, got {reg}")));
    }
    if !k.is_square() {
        return Err(Error::config(format!("kernel matrix is {}x{}, not square", k.nrows(), k.ncols())));
    }
    let m = k.nrows();
    for i in 0..m {
        for j in i + 1..m {
            if k[(i, j)] != k[(j, i)] {
                return Err(Error::config(format!("kernel matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    let mut regularized = k.clone();
    for i in 0..m {
        regularized[(i, i)] += reg;
    }
    let chol = nalgebra::linalg::Cholesky::new(regularized.clone())
        .ok_or_else(|| Error::config("K + λI is not positive definite"))?;
    Ok(CovarianceFactor { reg, regularized, factor: chol.l() })
}

/// Issues perturbations `ε = σ L z` with one independent `z` column per
/// trajectory dimension. Draw `(iteration, index)` is a pure function of the
/// sampler's seed and stream.
#[derive(Debug, Clone)]
pub struct PerturbationSampler {
    factor: Arc<CovarianceFactor>,
    sigma: f64,
    key: StreamKey,
}

impl PerturbationSampler {
    pub fn new(factor: Arc<CovarianceFactor>, sigma: f64, seed: u64, stream_id: u64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::config(format!("noise scale must be non-negative, got {sigma}")));
        }
        Ok(Self { factor, sigma, key: StreamKey::new(seed, stream_id) })
    }

    pub fn factor(&self) -> &Arc<CovarianceFactor> {
        &self.factor
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// Draw `index` of `iteration`, shaped `size × dims`.
    pub fn draw(&self, iteration: u64, index: u64, dims: usize) -> DMatrix<f64> {
        let m = self.factor.size();
        let mut rng = self.key.rng(iteration, index);
        let z = DMatrix::from_fn(m, dims, |_, _| StandardNormal.sample(&mut rng));
        let mut eps = self.factor.lower() * z;
        eps *= self.sigma;
        eps
    }

    /// `count` draws of `iteration`, evaluated in parallel. Output order is the
    /// draw index order.
    pub fn sample(&self, iteration: u64, count: usize, dims: usize) -> Vec<DMatrix<f64>> {
        (0..count as u64).into_par_iter().map(|s| self.draw(iteration, s, dims)).collect()
    }
}
