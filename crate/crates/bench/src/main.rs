use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nfg_core::bench::{
    aggregate, evaluate_external, read_records_csv, render_table, run_benchmark, write_outputs, write_records_csv,
    BenchConfig,
};
use nfg_core::{BoxEnvironment, Error, TimeGrid, WaypointPath};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUN: u8 = 3;

#[derive(Parser)]
#[command(name = "bench", version, about = "Trajectory optimization benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured method on every seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of runs executed concurrently.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Score an external waypoint CSV on an environment preset.
    Evaluate {
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long)]
        horizon: f64,
        #[arg(long)]
        rate: f64,
    },
    /// Aggregate an existing records.csv into a summary table.
    Summarize {
        #[arg(long)]
        records: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::DegeneratePath(_) => EXIT_CONFIG,
        _ => EXIT_RUN,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out, parallel } => {
            let cfg = BenchConfig::from_file(&config)?;
            if parallel == Some(0) {
                return Err(Error::Config("--parallel must be at least 1".into()));
            }
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let results = run_benchmark(&cfg, parallel)?;
            let summary = write_outputs(&dir, &results)?;
            print!("{}", render_table(&summary));
            println!("outputs written to {}", dir.display());
        }
        Command::Evaluate { path, env, horizon, rate } => {
            let environment = BoxEnvironment::preset(&env)?;
            let grid = TimeGrid::new(horizon, rate)?;
            let file = File::open(&path).map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
            let waypoints = WaypointPath::read_csv(file)?;
            let (record, _) = evaluate_external(&waypoints, &environment, &grid)?;
            write_records_csv(std::io::stdout().lock(), &[record])?;
        }
        Command::Summarize { records } => {
            let file =
                File::open(&records).map_err(|e| Error::Config(format!("cannot open {}: {e}", records.display())))?;
            let recs = read_records_csv(file)?;
            print!("{}", render_table(&aggregate(&recs)));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
