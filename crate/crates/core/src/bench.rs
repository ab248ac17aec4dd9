//! Benchmark harness: configuration, per-run records, aggregation and the
//! external-path evaluation pipeline.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    chomp_optimize, mppi_optimize, stomp_optimize, ChompConfig, MppiConfig, StompConfig, WienerSampler,
};
use crate::env::{first_collision, BoxEnvironment, BoxObjective, BoxObstacle, ScoreConfig};
use crate::error::{Error, Result};
use crate::kernel::{factorize, kernel_matrix, CovarianceFactor, PerturbationSampler, SEKernel};
use crate::nfg::{optimize, write_trace_csv, IterationTrace, NfgConfig};
use crate::rng::{stream_id, StreamKey};
use crate::trajectory::{
    arc_length_times, average_abs_jerk, format_full, path_length, resample, unwrap_angles, TimeGrid, Trajectory,
    WaypointPath,
};

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EnvironmentSpec {
    Preset(String),
    Boxes(Vec<BoxObstacle>),
}

impl EnvironmentSpec {
    pub fn build(&self) -> Result<BoxEnvironment> {
        match self {
            EnvironmentSpec::Preset(name) => BoxEnvironment::preset(name),
            EnvironmentSpec::Boxes(boxes) => BoxEnvironment::new(boxes.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon_seconds: f64,
    pub rate_hz: f64,
}

impl GridSpec {
    pub fn build(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon_seconds, self.rate_hz)
    }
}

/// Prior covariance `σ² (K + λI)` shared by NFG and STOMP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    pub variance: f64,
    pub length_scale: f64,
    /// Absolute diagonal regularization; `1e-6 · variance` when absent.
    #[serde(default)]
    pub reg: Option<f64>,
    pub sigma: f64,
}

impl PerturbationSpec {
    pub fn kernel(&self) -> Result<SEKernel> {
        SEKernel::new(self.variance, self.length_scale)
    }

    pub fn factor(&self, grid: &TimeGrid) -> Result<CovarianceFactor> {
        let kernel = self.kernel()?;
        factorize(&kernel_matrix(grid, &kernel), self.reg.unwrap_or_else(|| kernel.default_reg()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum MethodKind {
    Nfg(NfgConfig),
    Stomp(StompConfig),
    Chomp(ChompConfig),
    Mppi(MppiConfig),
}

impl MethodKind {
    pub fn name(&self) -> &'static str {
        match self {
            MethodKind::Nfg(_) => "nfg",
            MethodKind::Stomp(_) => "stomp",
            MethodKind::Chomp(_) => "chomp",
            MethodKind::Mppi(_) => "mppi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    /// Display name and random-stream label; defaults to the method name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(flatten)]
    pub kind: MethodKind,
}

impl MethodSpec {
    pub fn new(kind: MethodKind) -> Self {
        Self { label: None, kind }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.kind.name())
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("bench-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub environment: EnvironmentSpec,
    pub grid: GridSpec,
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub score: ScoreConfig,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl BenchConfig {
    /// Parses and validates a JSON config. Sigma, `n_pow` and the jerk weight
    /// are taken from the shared blocks and copied into each method.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: BenchConfig = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// The four-method narrow-passage benchmark with the shipped settings.
    pub fn narrow_passage() -> Self {
        let nfg = NfgConfig { step_sizes: crate::nfg::StepSchedule::Constant(2.0), ..NfgConfig::default() };
        let mppi = MppiConfig { noise_scale: 0.03, weight_obs: 100.0, ..MppiConfig::default() };
        let mut cfg = Self {
            environment: EnvironmentSpec::Preset(crate::env::NARROW_PASSAGE_V1.to_string()),
            grid: GridSpec { horizon_seconds: 1.0, rate_hz: 100.0 },
            perturbation: PerturbationSpec { variance: 0.29, length_scale: 0.22, reg: None, sigma: 0.14 },
            score: ScoreConfig::default(),
            methods: vec![
                MethodSpec::new(MethodKind::Nfg(nfg)),
                MethodSpec::new(MethodKind::Stomp(StompConfig::default())),
                MethodSpec::new(MethodKind::Chomp(ChompConfig::default())),
                MethodSpec::new(MethodKind::Mppi(mppi)),
            ],
            seeds: default_seeds(),
            output_dir: default_output_dir(),
        };
        cfg.resolve();
        cfg
    }

    fn resolve(&mut self) {
        for m in &mut self.methods {
            match &mut m.kind {
                MethodKind::Nfg(c) => {
                    c.sigma = self.perturbation.sigma;
                    c.n_pow = self.score.n_pow;
                }
                MethodKind::Chomp(c) => c.lambda_jerk = self.score.lambda_jerk,
                MethodKind::Stomp(_) | MethodKind::Mppi(_) => {}
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.environment.build()?;
        self.grid.build()?;
        self.perturbation.kernel()?;
        if !(self.perturbation.sigma.is_finite() && self.perturbation.sigma > 0.0) {
            return Err(Error::config("perturbation sigma must be positive"));
        }
        if let Some(reg) = self.perturbation.reg {
            if !(reg.is_finite() && reg > 0.0) {
                return Err(Error::config("perturbation reg must be positive"));
            }
        }
        self.score.validate()?;
        if self.methods.is_empty() {
            return Err(Error::config("no methods configured"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("no seeds configured"));
        }
        let mut labels = HashSet::new();
        for m in &self.methods {
            if !labels.insert(m.label()) {
                return Err(Error::config(format!("duplicate method label {:?}", m.label())));
            }
            if m.label().is_empty() || m.label().contains(['/', '\\', ',']) {
                return Err(Error::config(format!("method label {:?} is not usable as a directory name", m.label())));
            }
            match &m.kind {
                MethodKind::Nfg(c) => c.validate()?,
                MethodKind::Stomp(c) => c.validate()?,
                MethodKind::Chomp(c) => c.validate()?,
                MethodKind::Mppi(c) => c.validate()?,
            }
        }
        Ok(())
    }
}

/// One optimizer run, evaluated on the final trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub success: bool,
    pub runtime_s: f64,
    pub path_length: f64,
    /// Present only for collision-free trajectories.
    pub avg_jerk: Option<f64>,
    pub iterations_used: usize,
    /// Time of the first colliding grid point, if any.
    pub first_collision_t: Option<f64>,
}

impl RunRecord {
    /// Evaluates a trajectory against the environment with the same
    /// criteria for every method.
    pub fn evaluate(
        method: &str,
        seed: u64,
        env: &BoxEnvironment,
        traj: &Trajectory,
        runtime_s: f64,
        iterations_used: usize,
    ) -> Result<Self> {
        let grid = traj.grid();
        let collision = first_collision(env, grid, &traj.column(0));
        let avg_jerk = match collision {
            None => Some(average_abs_jerk(traj)?),
            Some(_) => None,
        };
        Ok(Self {
            method: method.to_string(),
            seed,
            success: collision.is_none(),
            runtime_s,
            path_length: path_length(traj),
            avg_jerk,
            iterations_used,
            first_collision_t: collision.map(|k| grid.time(k)),
        })
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub record: RunRecord,
    /// Method kind (`nfg`, `stomp`, ...), independent of the label.
    pub kind: &'static str,
    pub trajectory: Trajectory,
    pub trace: Vec<IterationTrace>,
}

fn run_one(
    method: &MethodSpec,
    seed: u64,
    env: &BoxEnvironment,
    grid: TimeGrid,
    score: &ScoreConfig,
    factor: &Arc<CovarianceFactor>,
    sigma: f64,
) -> Result<RunResult> {
    let label = method.label();
    let stream = stream_id(label);
    let y0 = Trajectory::zeros(grid, 1);
    let objective = BoxObjective::new(env.clone(), grid, *score);
    let started = Instant::now();
    let (trajectory, trace, iterations_used) = match &method.kind {
        MethodKind::Nfg(cfg) => {
            let sampler = PerturbationSampler::new(Arc::clone(factor), sigma, seed, stream)?;
            let out = optimize(&y0, &objective, &sampler, cfg)?;
            (out.trajectory, out.trace, out.iterations_used)
        }
        MethodKind::Stomp(cfg) => {
            let sampler = PerturbationSampler::new(Arc::clone(factor), sigma, seed, stream)?;
            let out = stomp_optimize(&y0, &objective, cfg, &sampler)?;
            (out.trajectory, out.trace, out.iterations_used)
        }
        MethodKind::Chomp(cfg) => {
            let out = chomp_optimize(&y0, env, cfg, Some(factor), StreamKey::new(seed, stream))?;
            (out.trajectory, out.trace, out.iterations_used)
        }
        MethodKind::Mppi(cfg) => {
            let sampler = WienerSampler::new(cfg.noise_scale, StreamKey::new(seed, stream));
            let out = mppi_optimize(&y0, env, cfg, &sampler)?;
            (out.trajectory, out.trace, out.iterations_used)
        }
    };
    let runtime = started.elapsed().as_secs_f64();
    let record = RunRecord::evaluate(label, seed, env, &trajectory, runtime, iterations_used)?;
    log::info!("{label} seed {seed}: success={} iterations={} runtime={runtime:.3}s", record.success, iterations_used);
    Ok(RunResult { record, kind: method.kind.name(), trajectory, trace })
}

/// Runs every `(method, seed)` pair from a zero initialization and returns
/// results in config order. With `parallel = Some(n)` independent runs are
/// spread over `n` worker threads; outputs do not depend on `n`.
pub fn run_benchmark(cfg: &BenchConfig, parallel: Option<usize>) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let env = cfg.environment.build()?;
    let grid = cfg.grid.build()?;
    let factor = Arc::new(cfg.perturbation.factor(&grid)?);
    let jobs: Vec<(&MethodSpec, u64)> =
        cfg.methods.iter().flat_map(|m| cfg.seeds.iter().map(move |s| (m, *s))).collect();
    let exec = |(m, s): &(&MethodSpec, u64)| {
        run_one(m, *s, &env, grid, &cfg.score, &factor, cfg.perturbation.sigma).map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Run { method: m.label().to_string(), seed: *s, message: other.to_string() },
        })
    };
    match parallel {
        Some(n) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))?;
            pool.install(|| jobs.par_iter().map(exec).collect())
        }
        _ => jobs.iter().map(exec).collect(),
    }
}

const RECORD_HEADER: [&str; 8] =
    ["method", "seed", "success", "runtime_s", "path_length", "avg_jerk", "iterations_used", "first_collision_t"];

fn optional(v: Option<f64>) -> String {
    v.map(format_full).unwrap_or_default()
}

pub fn write_records_csv<W: Write>(writer: W, records: &[RunRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(RECORD_HEADER)?;
    for r in records {
        out.write_record([
            r.method.clone(),
            r.seed.to_string(),
            r.success.to_string(),
            format!("{:.6}", r.runtime_s),
            format_full(r.path_length),
            optional(r.avg_jerk),
            r.iterations_used.to_string(),
            optional(r.first_collision_t),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(reader);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != RECORD_HEADER {
        return Err(Error::Parse(format!("unexpected records header {header:?}")));
    }
    let num = |s: &str, line: usize| -> Result<f64> {
        s.trim().parse().map_err(|_| Error::Parse(format!("line {line}: {s:?} is not a number")))
    };
    let opt = |s: &str, line: usize| -> Result<Option<f64>> {
        if s.trim().is_empty() {
            Ok(None)
        } else {
            num(s, line).map(Some)
        }
    };
    let mut records = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let int = |s: &str| -> Result<u64> {
            s.trim().parse().map_err(|_| Error::Parse(format!("line {line}: {s:?} is not an integer")))
        };
        let success = match row[2].trim() {
            "true" => true,
            "false" => false,
            other => return Err(Error::Parse(format!("line {line}: {other:?} is not a boolean"))),
        };
        records.push(RunRecord {
            method: row[0].to_string(),
            seed: int(&row[1])?,
            success,
            runtime_s: num(&row[3], line)?,
            path_length: num(&row[4], line)?,
            avg_jerk: opt(&row[5], line)?,
            iterations_used: int(&row[6])? as usize,
            first_collision_t: opt(&row[7], line)?,
        });
    }
    Ok(records)
}

/// Mean and sample standard deviation (`n - 1`); a single value has std 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Values are sorted first so the result does not depend on input order.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
            dev.sort_by(f64::total_cmp);
            (dev.iter().sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub runtime: Stat,
    pub path_length: Stat,
    /// Over successful runs only.
    pub avg_jerk: Option<Stat>,
}

/// Groups records by method (sorted by name). Jerk statistics only include
/// successful runs.
pub fn aggregate(records: &[RunRecord]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.method).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(method, rs)| {
            let successes = rs.iter().filter(|r| r.success).count();
            let runtimes: Vec<f64> = rs.iter().map(|r| r.runtime_s).collect();
            let lengths: Vec<f64> = rs.iter().map(|r| r.path_length).collect();
            let jerks: Vec<f64> = rs.iter().filter(|r| r.success).filter_map(|r| r.avg_jerk).collect();
            MethodSummary {
                method: method.to_string(),
                runs: rs.len(),
                successes,
                success_rate: 100.0 * successes as f64 / rs.len() as f64,
                runtime: Stat::of(&runtimes).expect("non-empty group"),
                path_length: Stat::of(&lengths).expect("non-empty group"),
                avg_jerk: Stat::of(&jerks),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(writer: W, summary: &[MethodSummary]) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    out.write_record([
        "method",
        "runs",
        "success_rate",
        "time_mean",
        "time_std",
        "path_length_mean",
        "path_length_std",
        "avg_jerk_mean",
        "avg_jerk_std",
    ])?;
    for s in summary {
        let (jm, js) = match s.avg_jerk {
            Some(j) => (format_full(j.mean), format_full(j.std)),
            None => ("-".to_string(), "-".to_string()),
        };
        out.write_record([
            s.method.clone(),
            s.runs.to_string(),
            format!("{}", s.success_rate),
            format!("{:.6}", s.runtime.mean),
            format!("{:.6}", s.runtime.std),
            format_full(s.path_length.mean),
            format_full(s.path_length.std),
            jm,
            js,
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Human-readable table with `mean ± std` cells.
pub fn render_table(summary: &[MethodSummary]) -> String {
    let pm = |s: Stat| format!("{:.2} ± {:.2}", s.mean, s.std);
    let rows: Vec<[String; 5]> = summary
        .iter()
        .map(|s| {
            [
                s.method.clone(),
                format!("{:.0}", s.success_rate),
                pm(s.runtime),
                pm(s.path_length),
                s.avg_jerk.map(pm).unwrap_or_else(|| "-".to_string()),
            ]
        })
        .collect();
    let header = ["Method", "Success Rate (%)", "Time (s)", "Path Length", "Avg Jerk"];
    let mut widths = header.map(|h| h.chars().count());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> =
            cells.iter().zip(&widths).map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count()))).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut table = line(&header.map(str::to_string));
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    table.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for row in &rows {
        table.push_str(&line(row));
    }
    table
}

/// Writes `records.csv`, `summary.csv` and `<method>/<seed>/{trajectory,trace}.csv`.
/// Baseline traces carry a leading `method` column.
pub fn write_outputs(dir: &Path, results: &[RunResult]) -> Result<Vec<MethodSummary>> {
    fs::create_dir_all(dir)?;
    let records: Vec<RunRecord> = results.iter().map(|r| r.record.clone()).collect();
    write_records_csv(fs::File::create(dir.join(RECORDS_FILE))?, &records)?;
    let summary = aggregate(&records);
    write_summary_csv(fs::File::create(dir.join(SUMMARY_FILE))?, &summary)?;
    for r in results {
        let run_dir = dir.join(&r.record.method).join(r.record.seed.to_string());
        fs::create_dir_all(&run_dir)?;
        r.trajectory.write_csv(fs::File::create(run_dir.join("trajectory.csv"))?)?;
        let method = (r.kind != "nfg").then_some(r.record.method.as_str());
        write_trace_csv(fs::File::create(run_dir.join("trace.csv"))?, method, &r.trace)?;
    }
    Ok(summary)
}

/// Evaluates an externally produced waypoint path: angle unwrapping,
/// duplicate removal, arc-length timing, resampling onto the grid and the
/// standard success and jerk criteria.
pub fn evaluate_external(
    path: &WaypointPath,
    env: &BoxEnvironment,
    grid: &TimeGrid,
) -> Result<(RunRecord, Trajectory)> {
    let started = Instant::now();
    let unwrapped = unwrap_angles(path).dedup()?;
    let times = arc_length_times(&unwrapped, grid.horizon_seconds())?;
    let traj = resample(&unwrapped, &times, grid)?;
    let record = RunRecord::evaluate("external", 0, env, &traj, started.elapsed().as_secs_f64(), 0)?;
    Ok((record, traj))
}
