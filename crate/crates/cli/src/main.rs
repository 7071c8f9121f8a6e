//! `br-infill`: simulation, estimation and verification driver.
//!
//! Every subcommand reads an optional flat TOML file (`--config`), takes its
//! seed from `--seed`, else a `seed` key in the file, else 20240601, and writes
//! into `--out` (default `.`). Unknown or missing keys exit with status 2.
//!
//! Output tables are CSV with a header row, `.` decimals and 17 significant
//! digits. Each row starts with `config_hash` (SHA-256 of the resolved
//! configuration as JSON, without the replicate count), `seed` and
//! `version`. Each table has a JSON sidecar of the same stem echoing the
//! configuration.
//!
//! * `simulate` -> `simulate.csv`: `intensity, replicate, point, kind, x, y,
//!   eta, argmax`, one row per evaluation point; `kind` is `site` for observed
//!   Delaunay vertices and `grid` for local-time grid nodes; `argmax` is the
//!   index of the spectral function attaining the maximum.
//! * `estimate` -> `estimates.csv` (one row per replicate and intensity,
//!   empty fields for skipped or failed summaries, `error` set on failure)
//!   and `summary.json` (local-time and rate reports). Re-running with the
//!   same configuration and seed, or with a larger replicate count, only
//!   adds missing replicates.
//! * `verify <suite>` -> `verify_<suite>.csv`; exit status 0 iff every
//!   check passes, 1 otherwise.
//! * `typical-cell` -> `typical_cell.csv`: `sample, radius, theta1, theta2,
//!   theta3, area, edge_length, trials`.
//!
//! Numeric columns are bit-identical across re-runs except `wall_time_s`.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use br_infill::verify::Suite;
use clap::{Args, Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Library(#[from] br_infill::error::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Library(br_infill::error::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Flat TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides a `seed` key in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Parser)]
#[command(
    name = "br-infill",
    version,
    about = "Brown-Resnick infill experiments on Poisson-Delaunay designs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate fields and dump sites, values and argmax labels.
    Simulate(Common),
    /// Simulate and estimate replicates, appending to the results table.
    Estimate(Common),
    /// Run an acceptance suite: numerics, geometry, likelihood, asymptotics, rates.
    Verify {
        suite: Suite,
        #[command(flatten)]
        common: Common,
    },
    /// Sample typical Delaunay cells.
    TypicalCell(Common),
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Simulate(c) => {
            println!("{}", commands::simulate(&c)?.display());
            Ok(true)
        }
        Command::Estimate(c) => {
            println!("{}", commands::estimate(&c)?.display());
            Ok(true)
        }
        Command::TypicalCell(c) => {
            println!("{}", commands::typical_cell(&c)?.display());
            Ok(true)
        }
        Command::Verify { suite, common } => {
            let (path, reports) = commands::verify(&common, suite)?;
            let width = reports.iter().map(|r| r.id.len()).max().unwrap_or(0);
            for r in &reports {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!(
                    "{:width$}  {status}  {:>8.1}s  {}",
                    r.id, r.wall_time_s, r.detail
                );
            }
            println!("{}", path.display());
            Ok(reports.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
