use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BaselineOutcome, SPREAD_GUARD};
use crate::env::{penetrations, BoxEnvironment, BoxObjective, Objective, ScoreConfig};
use crate::error::{Error, Result};
use crate::kernel::CovarianceFactor;
use crate::nfg::{Boundary, IterationTrace};
use crate::rng::StreamKey;
use crate::trajectory::{average_abs_jerk, Trajectory};

/// Metric used to turn the Euclidean gradient into an update direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChompMetric {
    /// Plain gradient.
    Identity,
    /// Gradient premultiplied by the shared regularized kernel matrix `K_λ`.
    #[default]
    Covariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChompConfig {
    pub iterations: usize,
    /// Largest per-point displacement of one update.
    pub step: f64,
    /// Set from the score block when loaded from a benchmark file.
    #[serde(skip_deserializing)]
    pub lambda_jerk: f64,
    pub metric: ChompMetric,
    pub early_stop: bool,
    pub boundary: Boundary,
}

impl Default for ChompConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            step: 0.1,
            lambda_jerk: 1e-4,
            metric: ChompMetric::Covariance,
            early_stop: false,
            boundary: Boundary::default(),
        }
    }
}

impl ChompConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::config(format!("CHOMP step must be positive, got {}", self.step)));
        }
        if self.iterations == 0 {
            return Err(Error::config("CHOMP needs at least one iteration"));
        }
        if !(self.lambda_jerk.is_finite() && self.lambda_jerk >= 0.0) {
            return Err(Error::config("CHOMP lambda_jerk must be non-negative"));
        }
        Ok(())
    }
}

/// Contiguous run of colliding grid indices around the deepest penetration.
fn deepest_region(scores: &[f64]) -> Option<std::ops::Range<usize>> {
    let (deepest, depth) =
        scores.iter().copied().enumerate().fold((0, 0.0), |best, (i, s)| if s < best.1 { (i, s) } else { best });
    if depth >= 0.0 {
        return None;
    }
    let mut lo = deepest;
    while lo > 0 && scores[lo - 1] < 0.0 {
        lo -= 1;
    }
    let mut hi = deepest + 1;
    while hi < scores.len() && scores[hi] < 0.0 {
        hi += 1;
    }
    Some(lo..hi)
}

/// Euclidean gradient of `J = 1 - f` for a one-dimensional trajectory.
///
/// In collision, only the deepest penetration region is pushed: each of its
/// points gets `±1/L` pointing into the box, so a descent step moves it toward
/// the nearer horizontal face. Points exactly midway share one random sign per
/// call. Without collision, the gradient of `1 - exp(-λ J̄)` goes through the
/// adjoint of the third-difference stencil.
pub fn chomp_gradient<R: Rng + ?Sized>(
    y: &Trajectory,
    env: &BoxEnvironment,
    cfg: &ChompConfig,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if y.dims() != 1 {
        return Err(Error::precondition(format!("CHOMP gradient needs a 1-D trajectory, got {}", y.dims())));
    }
    let grid = y.grid();
    let column = y.column(0);
    let steps = column.len();
    let scores = penetrations(env, grid, &column);
    let mut grad = DVector::zeros(steps);
    if let Some(region) = deepest_region(&scores) {
        let mut tie_sign: Option<f64> = None;
        let unit = 1.0 / steps as f64;
        for k in region {
            let (b, _) = env.deepest_box(grid.time(k), column[k]).expect("colliding point lies in a box");
            let b = env.boxes()[b];
            let (below, above) = (column[k] - b.y_lo, b.y_hi - column[k]);
            // +1 means the outward direction is +y
            let outward = if above < below {
                1.0
            } else if below < above {
                -1.0
            } else {
                *tie_sign.get_or_insert_with(|| if rng.random::<bool>() { 1.0 } else { -1.0 })
            };
            grad[k] = -outward * unit;
        }
        return Ok(grad);
    }
    let dt3 = grid.dt().powi(3);
    let windows = steps - 3;
    let jerk = average_abs_jerk(y)?;
    let f = (-cfg.lambda_jerk * jerk).exp();
    let scale = cfg.lambda_jerk * f / (windows as f64 * dt3);
    for w in 0..windows {
        let window = [column[w], column[w + 1], column[w + 2], column[w + 3]];
        let j = crate::trajectory::third_difference(window[0], window[1], window[2], window[3]);
        // rounding noise on locally cubic segments is not a jerk direction
        let noise = 64.0 * f64::EPSILON * window.iter().map(|v| v.abs()).sum::<f64>();
        let sign = if j.abs() <= noise { 0.0 } else { j.signum() };
        for (offset, coef) in [-1.0, 3.0, -3.0, 1.0].into_iter().enumerate() {
            grad[w + offset] += scale * sign * coef;
        }
    }
    Ok(grad)
}

/// Gradient descent on `J = 1 - f`. With the covariance metric, `factor`
/// supplies `K_λ`.
pub fn chomp_optimize(
    y0: &Trajectory,
    env: &BoxEnvironment,
    cfg: &ChompConfig,
    factor: Option<&CovarianceFactor>,
    key: StreamKey,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    let metric: Option<&DMatrix<f64>> = match cfg.metric {
        ChompMetric::Identity => None,
        ChompMetric::Covariance => {
            let f = factor.ok_or_else(|| Error::config("covariance metric needs a covariance factor"))?;
            if f.size() != y0.grid().steps() {
                return Err(Error::config("covariance factor size differs from the grid"));
            }
            Some(f.regularized())
        }
    };
    let score_cfg = ScoreConfig { lambda_jerk: cfg.lambda_jerk, ..ScoreConfig::default() };
    let objective = BoxObjective::new(env.clone(), *y0.grid(), score_cfg);
    let mut y = y0.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        if cfg.early_stop && objective.is_feasible(y.values()) {
            break;
        }
        let started = Instant::now();
        let mut rng = key.rng(k as u64, 0);
        let grad = chomp_gradient(&y, env, cfg, &mut rng)?;
        let direction = match metric {
            Some(m) => m * &grad,
            None => grad,
        };
        let largest = direction.amax();
        let update = &direction * (-cfg.step / (largest + SPREAD_GUARD));
        let mut values = y.values() + DMatrix::from_column_slice(update.len(), 1, update.as_slice());
        cfg.boundary.apply(&mut values, y.values());
        y = Trajectory::new(*y.grid(), values)?;
        trace.push(IterationTrace {
            iteration: k,
            best_score: objective.score(y.values()),
            mean_weight: 1.0,
            estimator_norm: largest,
            feasible: objective.is_feasible(y.values()),
            wall_time: started.elapsed().as_secs_f64(),
        });
    }
    let iterations_used = trace.len();
    Ok(BaselineOutcome { trajectory: y, trace, iterations_used })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{factorize, kernel_matrix, SEKernel};
    use crate::trajectory::TimeGrid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 100.0).unwrap()
    }

    #[test]
    fn straight_line_is_a_fixed_point() {
        let y = Trajectory::from_fn(grid(), |t| 0.3 * t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = chomp_gradient(&y, &BoxEnvironment::empty(), &ChompConfig::default(), &mut rng).unwrap();
        assert!(g.amax() < 1e-9);
        let out = chomp_optimize(
            &y,
            &BoxEnvironment::empty(),
            &ChompConfig { iterations: 3, metric: ChompMetric::Identity, ..ChompConfig::default() },
            None,
            StreamKey::new(0, 0),
        )
        .unwrap();
        assert!((out.trajectory.values() - y.values()).amax() < 1e-9);
    }

    #[test]
    fn midpoint_tie_takes_both_signs() {
        let env = BoxEnvironment::narrow_passage();
        let y = Trajectory::zeros(grid(), 1);
        let mut signs = std::collections::BTreeSet::new();
        for seed in 0..32 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = chomp_gradient(&y, &env, &ChompConfig::default(), &mut rng).unwrap();
            // B2 spans t = 0.40..=0.60 and is the deepest region at depth 2
            assert!((0..40).chain(61..100).all(|k| g[k] == 0.0));
            let s = g[50].signum();
            assert!((40..=60).all(|k| g[k].signum() == s));
            signs.insert(s as i32);
        }
        assert_eq!(signs.into_iter().collect::<Vec<_>>(), vec![-1, 1]);
    }

    #[test]
    fn off_center_point_moves_toward_nearer_face() {
        let env = BoxEnvironment::narrow_passage();
        // y = 1.5 inside B2: 3.5 to the lower face, 0.5 to the upper face
        let y = Trajectory::from_fn(grid(), |t| if (0.4..=0.6).contains(&t) { 1.5 } else { 4.5 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = chomp_gradient(&y, &env, &ChompConfig::default(), &mut rng).unwrap();
        // descent moves along -g, so +y needs a negative gradient
        assert!(g[50] < 0.0);
    }

    #[test]
    fn jerk_gradient_matches_finite_differences() {
        let g = grid();
        let y = Trajectory::from_fn(g, |t| (9.0 * t).sin() + 0.3 * (23.0 * t).cos()).unwrap();
        let cfg = ChompConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grad = chomp_gradient(&y, &BoxEnvironment::empty(), &cfg, &mut rng).unwrap();
        let cost = |v: &DMatrix<f64>| {
            1.0 - (-cfg.lambda_jerk * average_abs_jerk(&Trajectory::new(g, v.clone()).unwrap()).unwrap()).exp()
        };
        let h = 1e-7;
        for k in [0, 1, 17, 50, 98, 99] {
            let mut up = y.values().clone();
            up[(k, 0)] += h;
            let mut down = y.values().clone();
            down[(k, 0)] -= h;
            let fd = (cost(&up) - cost(&down)) / (2.0 * h);
            assert!((fd - grad[k]).abs() <= 1e-4 * grad.amax(), "k={k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn deterministic_away_from_ties() {
        let env = BoxEnvironment::narrow_passage();
        let y = Trajectory::from_fn(grid(), |t| 0.1 + t).unwrap();
        let a = chomp_gradient(&y, &env, &ChompConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = chomp_gradient(&y, &env, &ChompConfig::default(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn covariance_metric_needs_a_factor() {
        let y = Trajectory::zeros(grid(), 1);
        let err = chomp_optimize(&y, &BoxEnvironment::empty(), &ChompConfig::default(), None, StreamKey::new(0, 0));
        assert!(err.is_err());
        let kernel = SEKernel::new(0.29, 0.22).unwrap();
        let f = factorize(&kernel_matrix(&grid(), &kernel), kernel.default_reg()).unwrap();
        let out = chomp_optimize(
            &y,
            &BoxEnvironment::narrow_passage(),
            &ChompConfig { iterations: 4, ..ChompConfig::default() },
            Some(&f),
            StreamKey::new(0, 0),
        )
        .unwrap();
        assert_eq!(out.trajectory.values()[(0, 0)], 0.0);
    }
}
