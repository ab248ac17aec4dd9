//! Box obstacles in the `(t, y)` plane, penetration scoring, the trajectory
//! score and its exponential transform.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{average_abs_jerk_values, TimeGrid, Trajectory};

/// Name of the built-in four-box narrow-passage environment.
pub const NARROW_PASSAGE_V1: &str = "narrow-passage-v1";

/// Exponent arguments are clamped to this magnitude when an absolute
/// (unshifted) transform is required.
pub const EXP_CLAMP: f64 = 700.0;

/// Closed box `[t_lo, t_hi] × [y_lo, y_hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxObstacle {
    pub t_lo: f64,
    pub t_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl BoxObstacle {
    pub fn new(t_lo: f64, t_hi: f64, y_lo: f64, y_hi: f64) -> Result<Self> {
        let b = Self { t_lo, t_hi, y_lo, y_hi };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.t_lo, self.t_hi, self.y_lo, self.y_hi].iter().all(|v| v.is_finite());
        if !finite || self.t_lo >= self.t_hi || self.y_lo >= self.y_hi {
            return Err(Error::config(format!("malformed box {self:?}")));
        }
        Ok(())
    }

    pub fn contains(&self, t: f64, y: f64) -> bool {
        (self.t_lo..=self.t_hi).contains(&t) && (self.y_lo..=self.y_hi).contains(&y)
    }

    /// Distance from `y` to the nearer horizontal face, i.e. how far the point
    /// must move vertically to leave the box.
    pub fn depth(&self, y: f64) -> f64 {
        (y - self.y_lo).min(self.y_hi - y)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxEnvironment {
    boxes: Vec<BoxObstacle>,
}

impl BoxEnvironment {
    pub fn new(boxes: Vec<BoxObstacle>) -> Result<Self> {
        for b in &boxes {
            b.validate()?;
        }
        Ok(Self { boxes })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// The four-box corridor of the synthetic benchmark.
    pub fn narrow_passage() -> Self {
        Self {
            boxes: vec![
                BoxObstacle { t_lo: 0.2, t_hi: 0.25, y_lo: -1.0, y_hi: 4.0 },
                BoxObstacle { t_lo: 0.4, t_hi: 0.6, y_lo: -2.0, y_hi: 2.0 },
                BoxObstacle { t_lo: 0.7, t_hi: 1.0, y_lo: 0.5, y_hi: 5.0 },
                BoxObstacle { t_lo: 0.7, t_hi: 1.0, y_lo: -5.0, y_hi: -0.5 },
            ],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            NARROW_PASSAGE_V1 => Ok(Self::narrow_passage()),
            "free-space" => Ok(Self::empty()),
            other => Err(Error::config(format!("unknown environment preset {other:?}"))),
        }
    }

    pub fn boxes(&self) -> &[BoxObstacle] {
        &self.boxes
    }

    pub fn with_box(&self, b: BoxObstacle) -> Result<Self> {
        b.validate()?;
        let mut boxes = self.boxes.clone();
        boxes.push(b);
        Ok(Self { boxes })
    }

    /// Index of the box realizing the penetration score at `(t, y)`, with its depth.
    pub fn deepest_box(&self, t: f64, y: f64) -> Option<(usize, f64)> {
        self.boxes.iter().enumerate().filter(|(_, b)| b.contains(t, y)).map(|(i, b)| (i, b.depth(y))).fold(
            None,
            |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            },
        )
    }
}

/// Non-positive penetration score: minus the largest depth over every box
/// containing `(t, y)`, or 0 when no box contains it.
pub fn penetration_step(env: &BoxEnvironment, t: f64, y: f64) -> f64 {
    match env.deepest_box(t, y) {
        Some((_, depth)) => -depth,
        None => 0.0,
    }
}

/// Per-grid-point penetration of a one-dimensional value column.
pub fn penetrations(env: &BoxEnvironment, grid: &TimeGrid, column: &[f64]) -> Vec<f64> {
    column.iter().enumerate().map(|(k, y)| penetration_step(env, grid.time(k), *y)).collect()
}

/// First grid index with a strictly negative penetration score.
pub fn first_collision(env: &BoxEnvironment, grid: &TimeGrid, column: &[f64]) -> Option<usize> {
    column.iter().enumerate().position(|(k, y)| penetration_step(env, grid.time(k), *y) < 0.0)
}

/// How infeasible trajectories are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfeasibleScore {
    /// Mean penetration, always `<= 0`.
    #[default]
    Penetration,
    /// `-∞`, which maps to a zero weight.
    NegInfinity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub lambda_jerk: f64,
    pub n_pow: f64,
    pub infeasible: InfeasibleScore,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { lambda_jerk: 1e-4, n_pow: 100.0, infeasible: InfeasibleScore::Penetration }
    }
}

impl ScoreConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_jerk.is_finite() && self.lambda_jerk >= 0.0) {
            return Err(Error::config(format!("lambda_jerk must be non-negative, got {}", self.lambda_jerk)));
        }
        if !(self.n_pow.is_finite() && self.n_pow > 0.0) {
            return Err(Error::config(format!("n_pow must be positive, got {}", self.n_pow)));
        }
        Ok(())
    }
}

/// `exp(-λ_jerk J̄)` for collision-free trajectories, mean penetration otherwise.
pub fn trajectory_score(env: &BoxEnvironment, traj: &Trajectory, cfg: &ScoreConfig) -> Result<f64> {
    if traj.dims() != 1 {
        return Err(Error::precondition(format!("the box score needs a 1-D trajectory, got {}", traj.dims())));
    }
    Ok(score_values(env, traj.grid(), traj.values(), cfg))
}

pub(crate) fn score_values(env: &BoxEnvironment, grid: &TimeGrid, values: &DMatrix<f64>, cfg: &ScoreConfig) -> f64 {
    let column = values.column(0);
    let mut total = 0.0;
    let mut colliding = false;
    for (k, y) in column.iter().enumerate() {
        let s = penetration_step(env, grid.time(k), *y);
        colliding |= s < 0.0;
        total += s;
    }
    if colliding {
        match cfg.infeasible {
            InfeasibleScore::Penetration => total / column.len() as f64,
            InfeasibleScore::NegInfinity => f64::NEG_INFINITY,
        }
    } else {
        (-cfg.lambda_jerk * average_abs_jerk_values(values, grid.dt())).exp()
    }
}

/// `exp(n_pow · score)` with the exponent clamped to `±EXP_CLAMP`; `-∞` maps to 0.
pub fn exp_transform(score: f64, cfg: &ScoreConfig) -> f64 {
    if score == f64::NEG_INFINITY {
        return 0.0;
    }
    (cfg.n_pow * score).clamp(-EXP_CLAMP, EXP_CLAMP).exp()
}

/// A black-box score over discretized trajectory values (`steps × dims`).
pub trait Objective: Sync {
    fn score(&self, values: &DMatrix<f64>) -> f64;

    /// Whether the values satisfy every hard constraint.
    fn is_feasible(&self, _values: &DMatrix<f64>) -> bool {
        true
    }
}

/// The box-environment trajectory score on a fixed grid.
#[derive(Debug, Clone)]
pub struct BoxObjective {
    pub env: BoxEnvironment,
    pub grid: TimeGrid,
    pub cfg: ScoreConfig,
}

impl BoxObjective {
    pub fn new(env: BoxEnvironment, grid: TimeGrid, cfg: ScoreConfig) -> Self {
        Self { env, grid, cfg }
    }
}

impl Objective for BoxObjective {
    fn score(&self, values: &DMatrix<f64>) -> f64 {
        score_values(&self.env, &self.grid, values, &self.cfg)
    }

    fn is_feasible(&self, values: &DMatrix<f64>) -> bool {
        first_collision(&self.env, &self.grid, values.column(0).as_slice()).is_none()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 100.0).unwrap()
    }

    #[test]
    fn penetration_examples() {
        let env = BoxEnvironment::narrow_passage();
        assert_eq!(penetration_step(&env, 0.1, 3.0), 0.0);
        assert_eq!(penetration_step(&env, 0.5, 0.0), -2.0);
        assert_abs_diff_eq!(penetration_step(&env, 0.22, 0.6), -1.6, epsilon = 1e-12);
    }

    #[test]
    fn penetration_is_zero_on_faces() {
        let env = BoxEnvironment::narrow_passage();
        assert_eq!(penetration_step(&env, 0.5, 2.0), 0.0);
        assert_eq!(penetration_step(&env, 0.5, -2.0), 0.0);
        assert_eq!(penetration_step(&env, 0.4, 0.0), -2.0);
    }

    #[test]
    fn overlapping_boxes_take_the_deepest() {
        let env = BoxEnvironment::new(vec![
            BoxObstacle::new(0.0, 1.0, 0.0, 1.0).unwrap(),
            BoxObstacle::new(0.0, 1.0, -3.0, 3.0).unwrap(),
        ])
        .unwrap();
        assert_abs_diff_eq!(penetration_step(&env, 0.5, 0.5), -2.5, epsilon = 1e-12);
        assert_eq!(env.deepest_box(0.5, 0.5).unwrap().0, 1);
    }

    #[test]
    fn malformed_boxes_are_rejected() {
        assert!(BoxObstacle::new(0.5, 0.4, 0.0, 1.0).is_err());
        assert!(BoxObstacle::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(BoxEnvironment::preset("nope").is_err());
    }

    #[test]
    fn constant_in_free_space_scores_one() {
        let t = Trajectory::from_fn(grid(), |_| 0.3).unwrap();
        assert_eq!(trajectory_score(&BoxEnvironment::empty(), &t, &ScoreConfig::default()).unwrap(), 1.0);
    }

    #[test]
    fn zero_trajectory_score_matches_stepwise_sum() {
        // brute force over the grid: B1 covers t = 0.20..=0.25 at depth 1, B2 covers 0.40..=0.60 at depth 2
        let g = grid();
        let mut total = 0.0;
        for k in 0..100 {
            let t = k as f64 / 100.0;
            if (0.2..=0.25).contains(&t) {
                total -= 1.0;
            }
            if (0.4..=0.6).contains(&t) {
                total -= 2.0;
            }
        }
        let expected = total / 100.0;
        let t = Trajectory::zeros(g, 1);
        let s = trajectory_score(&BoxEnvironment::narrow_passage(), &t, &ScoreConfig::default()).unwrap();
        assert_abs_diff_eq!(s, expected, epsilon = 1e-15);
        assert!(s < 0.0);
    }

    #[test]
    fn jerk_bonus_formula() {
        assert_abs_diff_eq!((-1e-4f64 * 100.0).exp(), 0.990050, epsilon = 1e-6);
        // a cubic has jerk exactly 6 everywhere
        let g = grid();
        let t = Trajectory::from_fn(g, |t| t * t * t).unwrap();
        let s = trajectory_score(&BoxEnvironment::empty(), &t, &ScoreConfig::default()).unwrap();
        assert_abs_diff_eq!(s, (-6e-4f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn score_requires_one_dimension() {
        let t = Trajectory::zeros(grid(), 2);
        assert!(trajectory_score(&BoxEnvironment::empty(), &t, &ScoreConfig::default()).is_err());
    }

    #[test]
    fn hard_infeasibility_maps_to_zero_weight() {
        let cfg = ScoreConfig { infeasible: InfeasibleScore::NegInfinity, ..ScoreConfig::default() };
        let t = Trajectory::zeros(grid(), 1);
        let s = trajectory_score(&BoxEnvironment::narrow_passage(), &t, &cfg).unwrap();
        assert_eq!(s, f64::NEG_INFINITY);
        assert_eq!(exp_transform(s, &cfg), 0.0);
    }

    #[test]
    fn exp_transform_examples() {
        let cfg = ScoreConfig::default();
        assert_eq!(exp_transform(0.0, &cfg), 1.0);
        let big = exp_transform(1.0, &cfg);
        assert!(big.is_finite());
        assert_abs_diff_eq!(big.ln(), 100.0, epsilon = 1e-9);
        assert!(exp_transform(10.0, &cfg).is_finite());
        assert!(exp_transform(0.2, &cfg) > exp_transform(0.1, &cfg));
    }

    #[test]
    fn config_validation() {
        assert!(ScoreConfig { n_pow: 0.0, ..ScoreConfig::default() }.validate().is_err());
        assert!(ScoreConfig { lambda_jerk: -1.0, ..ScoreConfig::default() }.validate().is_err());
    }

    proptest! {
        #[test]
        fn penetration_continuous_inside_b2(y in -2.0..2.0f64) {
            let env = BoxEnvironment::narrow_passage();
            let s = penetration_step(&env, 0.5, y);
            prop_assert!((s + (y + 2.0).min(2.0 - y)).abs() < 1e-12);
            let h = 1e-7;
            prop_assert!((penetration_step(&env, 0.5, (y + h).min(2.0)) - s).abs() <= 2.0 * h);
        }

        #[test]
        fn feasible_always_beats_infeasible(
            a in prop::collection::vec(-6.0..6.0f64, 100),
            shift in -0.4..0.4f64,
        ) {
            let env = BoxEnvironment::narrow_passage();
            let cfg = ScoreConfig::default();
            let g = grid();
            let colliding = Trajectory::from_samples(g, &a).unwrap();
            let sa = trajectory_score(&env, &colliding, &cfg).unwrap();
            // inside the final corridor and above B1/B2 tops elsewhere
            let free = Trajectory::from_fn(g, |t| if t < 0.65 { 4.5 + shift } else { shift }).unwrap();
            let sf = trajectory_score(&env, &free, &cfg).unwrap();
            prop_assert!(sf > 0.0 && sf <= 1.0);
            if first_collision(&env, &g, &a).is_some() {
                prop_assert!(sa <= 0.0);
            }
        }

        #[test]
        fn adding_a_box_never_raises_the_score(
            a in prop::collection::vec(-3.0..3.0f64, 100),
            t0 in 0.0..0.9f64, y0 in -3.0..2.0f64,
        ) {
            let env = BoxEnvironment::narrow_passage();
            let more = env.with_box(BoxObstacle::new(t0, t0 + 0.1, y0, y0 + 1.0).unwrap()).unwrap();
            let t = Trajectory::from_samples(grid(), &a).unwrap();
            let cfg = ScoreConfig::default();
            prop_assert!(trajectory_score(&more, &t, &cfg).unwrap() <= trajectory_score(&env, &t, &cfg).unwrap());
        }

        #[test]
        fn transform_preserves_argmax(scores in prop::collection::vec(-1.0..1.0f64, 1..40)) {
            let cfg = ScoreConfig::default();
            let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            let transformed: Vec<f64> = scores.iter().map(|s| exp_transform(*s, &cfg)).collect();
            prop_assert_eq!(argmax(&scores), argmax(&transformed));
        }
    }
}
