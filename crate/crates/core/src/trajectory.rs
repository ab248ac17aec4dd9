//! Time grids, discretized trajectories, waypoint paths and the operators
//! used to measure them (jerk, path length) or to bring externally planned
//! waypoint paths onto a uniform grid (unwrap, arc-length timing, resampling).

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative tolerance on `steps / rate == horizon`.
const GRID_TOLERANCE: f64 = 1e-9;

/// Uniform discretization of a fixed horizon. Grid point `k` sits at `k / rate_hz`,
/// so the first sample is at `t = 0` and the last at `horizon - dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon_seconds: f64,
    rate_hz: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon_seconds: f64, rate_hz: f64) -> Result<Self> {
        if !(horizon_seconds.is_finite() && horizon_seconds > 0.0) {
            return Err(Error::config(format!("horizon must be positive, got {horizon_seconds}")));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::config(format!("rate must be positive, got {rate_hz}")));
        }
        let steps = (horizon_seconds * rate_hz).round() as usize;
        if steps < 4 {
            return Err(Error::config(format!(
                "grid needs at least 4 points, {horizon_seconds} s at {rate_hz} Hz gives {steps}"
            )));
        }
        let implied = steps as f64 / rate_hz;
        if (implied - horizon_seconds).abs() > GRID_TOLERANCE * horizon_seconds {
            return Err(Error::config(format!(
                "horizon {horizon_seconds} s is not a whole number of {rate_hz} Hz steps"
            )));
        }
        Ok(Self { horizon_seconds, rate_hz, steps })
    }

    pub fn horizon_seconds(&self) -> f64 {
        self.horizon_seconds
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate_hz
    }

    /// Time of grid point `k`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.rate_hz
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.steps).map(|k| self.time(k)).collect()
    }
}

/// Values of a `dims`-dimensional trajectory at every grid point.
/// Rows are grid points, columns are dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    values: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != grid.steps() {
            return Err(Error::precondition(format!(
                "trajectory has {} rows but the grid has {} points",
                values.nrows(),
                grid.steps()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::precondition("trajectory needs at least one dimension"));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::precondition(format!("non-finite trajectory value {bad}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid, dims: usize) -> Self {
        Self { grid, values: DMatrix::zeros(grid.steps(), dims.max(1)) }
    }

    /// One-dimensional trajectory from per-grid-point samples.
    pub fn from_samples(grid: TimeGrid, samples: &[f64]) -> Result<Self> {
        Self::new(grid, DMatrix::from_column_slice(samples.len(), 1, samples))
    }

    /// Samples `f(t)` at every grid point of a one-dimensional trajectory.
    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        let samples: Vec<f64> = grid.times().into_iter().map(f).collect();
        Self::from_samples(grid, &samples)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    /// Column `dim` as a plain vector.
    pub fn column(&self, dim: usize) -> Vec<f64> {
        self.values.column(dim).iter().copied().collect()
    }

    /// Writes `t,dim0,...,dimN` with every value at 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dims()).map(|d| format!("dim{d}")));
        out.write_record(&header)?;
        for k in 0..self.grid.steps() {
            let mut row = vec![format_full(self.grid.time(k))];
            row.extend(self.values.row(k).iter().map(|v| format_full(*v)));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`]. The time column
    /// must match `grid`.
    pub fn read_csv<R: Read>(reader: R, grid: TimeGrid) -> Result<Self> {
        let mut input = csv::Reader::from_reader(reader);
        let dims = input.headers()?.len().saturating_sub(1);
        if dims == 0 {
            return Err(Error::Parse("trajectory CSV has no value columns".into()));
        }
        let mut data = Vec::with_capacity(grid.steps() * dims);
        let mut rows = 0;
        for (k, record) in input.records().enumerate() {
            let record = record?;
            let fields = parse_row(&record, k + 2)?;
            if fields.len() != dims + 1 {
                return Err(Error::Parse(format!("row {} has {} fields, expected {}", k + 2, fields.len(), dims + 1)));
            }
            if k >= grid.steps() || (fields[0] - grid.time(k)).abs() > 1e-9 * grid.horizon_seconds() {
                return Err(Error::Parse(format!("row {} does not lie on the configured grid", k + 2)));
            }
            data.extend_from_slice(&fields[1..]);
            rows += 1;
        }
        if rows != grid.steps() {
            return Err(Error::Parse(format!("expected {} rows, found {rows}", grid.steps())));
        }
        Self::new(grid, DMatrix::from_row_slice(rows, dims, &data))
    }
}

pub(crate) fn format_full(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_row(record: &csv::StringRecord, line: usize) -> Result<Vec<f64>> {
    record
        .iter()
        .map(|field| {
            field
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {line}: cannot parse {field:?} as a number")))
        })
        .collect()
}

/// Ordered configurations produced by an external planner, with a per-dimension
/// flag marking angular joints.
#[derive(Debug, Clone, PartialEq)]
pub struct WaypointPath {
    waypoints: Vec<Vec<f64>>,
    angular: Vec<bool>,
}

impl WaypointPath {
    /// A path with no angular dimensions.
    pub fn new(waypoints: Vec<Vec<f64>>) -> Result<Self> {
        let dims = waypoints.first().map_or(0, Vec::len);
        Self::with_angular(waypoints, vec![false; dims])
    }

    pub fn with_angular(waypoints: Vec<Vec<f64>>, angular: Vec<bool>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::DegeneratePath(format!("need at least 2 waypoints, got {}", waypoints.len())));
        }
        let dims = waypoints[0].len();
        if dims == 0 {
            return Err(Error::DegeneratePath("waypoints have no coordinates".into()));
        }
        if let Some(i) = waypoints.iter().position(|w| w.len() != dims) {
            return Err(Error::Parse(format!("waypoint {i} has {} coordinates, expected {dims}", waypoints[i].len())));
        }
        if angular.len() != dims {
            return Err(Error::config(format!("angular flags cover {} dims, path has {dims}", angular.len())));
        }
        if waypoints.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Parse("waypoint contains a non-finite value".into()));
        }
        Ok(Self { waypoints, angular })
    }

    /// One-dimensional path.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|v| vec![*v]).collect())
    }

    /// Parses one configuration per CSV row. A leading row that does not parse
    /// as numbers is treated as a header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut input = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
        let mut waypoints = Vec::new();
        for (i, record) in input.records().enumerate() {
            let record = record?;
            if record.iter().all(|f| f.trim().is_empty()) {
                continue;
            }
            match parse_row(&record, i + 1) {
                Ok(row) => waypoints.push(row),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(e),
            }
        }
        Self::new(waypoints)
    }

    pub fn waypoints(&self) -> &[Vec<f64>] {
        &self.waypoints
    }

    pub fn angular(&self) -> &[bool] {
        &self.angular
    }

    pub fn dims(&self) -> usize {
        self.angular.len()
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    /// Drops waypoints identical to their predecessor. Fails when fewer than two
    /// distinct waypoints remain.
    pub fn dedup(&self) -> Result<Self> {
        let mut waypoints: Vec<Vec<f64>> = Vec::with_capacity(self.waypoints.len());
        for w in &self.waypoints {
            if waypoints.last() != Some(w) {
                waypoints.push(w.clone());
            }
        }
        if waypoints.len() < 2 {
            return Err(Error::DegeneratePath("all waypoints are identical".into()));
        }
        Ok(Self { waypoints, angular: self.angular.clone() })
    }
}

/// Mean absolute third finite difference over the `steps - 3` valid windows and
/// all dimensions, divided by `dt³`.
pub fn average_abs_jerk(traj: &Trajectory) -> Result<f64> {
    let steps = traj.grid.steps();
    if steps < 4 {
        return Err(Error::precondition(format!("jerk needs at least 4 grid points, got {steps}")));
    }
    Ok(average_abs_jerk_values(&traj.values, traj.grid.dt()))
}

/// Same as [`average_abs_jerk`] on a raw `steps × dims` matrix with at least 4 rows.
pub(crate) fn average_abs_jerk_values(values: &DMatrix<f64>, dt: f64) -> f64 {
    let steps = values.nrows();
    let mut total = 0.0;
    for col in values.column_iter() {
        for t in 0..steps - 3 {
            total += third_difference(col[t], col[t + 1], col[t + 2], col[t + 3]).abs();
        }
    }
    total / ((steps - 3) * values.ncols()) as f64 / dt.powi(3)
}

#[inline]
pub(crate) fn third_difference(y0: f64, y1: f64, y2: f64, y3: f64) -> f64 {
    (y3 - y0) - 3.0 * (y2 - y1)
}

/// Sum of absolute per-step increments over all dimensions.
pub fn path_length(traj: &Trajectory) -> f64 {
    let values = &traj.values;
    (0..traj.dims())
        .map(|d| {
            let col = values.column(d);
            col.iter().zip(col.iter().skip(1)).map(|(a, b)| (b - a).abs()).sum::<f64>()
        })
        .sum()
}

/// Shifts every angular dimension by multiples of 2π so no consecutive increment
/// exceeds π in magnitude. Non-angular dimensions pass through untouched.
pub fn unwrap_angles(path: &WaypointPath) -> WaypointPath {
    let mut waypoints = path.waypoints.clone();
    for (d, _) in path.angular.iter().enumerate().filter(|(_, angular)| **angular) {
        let mut correction = 0.0;
        for (i, pair) in path.waypoints.windows(2).enumerate() {
            let delta = pair[1][d] - pair[0][d];
            let mut wrapped = (delta + PI).rem_euclid(2.0 * PI) - PI;
            if wrapped == -PI && delta > 0.0 {
                wrapped = PI;
            }
            if delta.abs() >= PI {
                correction += wrapped - delta;
            }
            waypoints[i + 1][d] = pair[1][d] + correction;
        }
    }
    WaypointPath { waypoints, angular: path.angular.clone() }
}

/// Assigns each waypoint a time proportional to its cumulative Euclidean
/// distance along the path, mapped onto `[0, duration]`.
pub fn arc_length_times(path: &WaypointPath, duration: f64) -> Result<Vec<f64>> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::config(format!("duration must be positive, got {duration}")));
    }
    let mut cumulative = Vec::with_capacity(path.len());
    cumulative.push(0.0);
    let mut s = 0.0;
    for pair in path.waypoints.windows(2) {
        let step: f64 = pair[0].iter().zip(&pair[1]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt();
        s += step;
        cumulative.push(s);
    }
    let total = s;
    if total <= 0.0 {
        return Err(Error::DegeneratePath("total arc length is zero".into()));
    }
    let mut times: Vec<f64> = cumulative.iter().map(|s| s / total * duration).collect();
    *times.last_mut().expect("path has waypoints") = duration;
    Ok(times)
}

/// Piecewise-linear interpolation of `path` at every point of `grid`.
pub fn resample(path: &WaypointPath, timestamps: &[f64], grid: &TimeGrid) -> Result<Trajectory> {
    if timestamps.len() != path.len() {
        return Err(Error::config(format!("{} timestamps for {} waypoints", timestamps.len(), path.len())));
    }
    let last = *timestamps.last().expect("path has at least two waypoints");
    if (last - grid.horizon_seconds()).abs() > GRID_TOLERANCE * grid.horizon_seconds() {
        return Err(Error::config(format!(
            "grid horizon {} s does not match final timestamp {last} s",
            grid.horizon_seconds()
        )));
    }
    if timestamps.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config("timestamps must be non-decreasing"));
    }
    let dims = path.dims();
    let mut values = DMatrix::zeros(grid.steps(), dims);
    let mut segment = 0;
    for k in 0..grid.steps() {
        let tau = grid.time(k);
        while segment + 2 < timestamps.len() && timestamps[segment + 1] <= tau {
            segment += 1;
        }
        let (t0, t1) = (timestamps[segment], timestamps[segment + 1]);
        let (q0, q1) = (&path.waypoints[segment], &path.waypoints[segment + 1]);
        for d in 0..dims {
            values[(k, d)] = if tau == t0 {
                q0[d]
            } else if tau >= t1 {
                q1[d]
            } else {
                let alpha = (tau - t0) / (t1 - t0);
                q0[d] + alpha * (q1[d] - q0[d])
            };
        }
    }
    Trajectory::new(*grid, values)
}
