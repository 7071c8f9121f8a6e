//! The four subcommands.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use br_infill::experiment::{
    local_time_report, rate_report, run_intensity, Design, ExperimentConfig, ResultRow,
};
use br_infill::fields::FieldSample;
use br_infill::geometry::sample_typical_cell;
use br_infill::rng::{stream, Purpose};
use br_infill::verify::{run_suite, CriterionReport, Suite, VerifyOptions};
use serde::{Deserialize, Serialize};

use crate::config::{config_hash, RawConfig};
use crate::output::{float, opt_float, write_sidecar, RunMeta, Table, META_COLUMNS};
use crate::{CliError, Common};

pub const SIMULATE_FILE: &str = "simulate.csv";
pub const ESTIMATE_FILE: &str = "estimates.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TYPICAL_CELL_FILE: &str = "typical_cell.csv";

const SIMULATE_COLUMNS: [&str; 8] = [
    "intensity",
    "replicate",
    "point",
    "kind",
    "x",
    "y",
    "eta",
    "argmax",
];

const ESTIMATE_COLUMNS: [&str; 15] = [
    "replicate",
    "intensity",
    "sigma2_pair",
    "sigma2_triple",
    "alpha_pair",
    "alpha_triple",
    "v2",
    "v3",
    "local_time",
    "edges",
    "triangles",
    "retained",
    "boundary_hits",
    "wall_time_s",
    "error",
];

const VERIFY_COLUMNS: [&str; 5] = ["suite", "criterion", "passed", "wall_time_s", "detail"];

const TYPICAL_CELL_COLUMNS: [&str; 8] = [
    "sample",
    "radius",
    "theta1",
    "theta2",
    "theta3",
    "area",
    "edge_length",
    "trials",
];

/// Typical-cell samples drawn from one RNG stream.
const CELL_BLOCK: u64 = 4096;

fn out_dir(common: &Common) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&common.out)?;
    Ok(common.out.clone())
}

fn experiment_config(common: &Common) -> Result<(ExperimentConfig, RunMeta), CliError> {
    let raw = RawConfig::load(common.config.as_deref())?;
    let seed = raw.seed(common.seed);
    let cfg: ExperimentConfig = raw.parse()?;
    cfg.validate()?;
    // the replicate count is left out so a study can be extended in place
    let meta = RunMeta {
        config_hash: config_hash(&ExperimentConfig {
            replicates: 0,
            ..cfg.clone()
        }),
        seed,
    };
    Ok((cfg, meta))
}

/// Runs `job` for every id in chunks of `workers` scoped threads and returns
/// the results in id order.
fn fan_out<T: Send>(ids: &[u64], workers: usize, job: impl Fn(u64) -> T + Sync) -> Vec<Vec<T>> {
    ids.chunks(workers.max(1))
        .map(|chunk| {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&id| {
                        let job = &job;
                        s.spawn(move || job(id))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect()
            })
        })
        .collect()
}

/// Dumps every simulated field: one row per evaluation point per replicate.
pub fn simulate(common: &Common) -> Result<PathBuf, CliError> {
    let (cfg, meta) = experiment_config(common)?;
    let params = cfg.validate()?;
    let path = out_dir(common)?.join(SIMULATE_FILE);
    write_sidecar(&path, "simulate", &meta, &cfg)?;
    let mut table = Table::create(&path, &SIMULATE_COLUMNS, &meta)?;
    let ids: Vec<u64> = (0..cfg.replicates).collect();
    for &n in &cfg.intensities {
        let shared = match cfg.resample_sites {
            true => None,
            false => Some(Design::build(n, &params, &cfg, meta.seed, None)?),
        };
        let job = |r: u64| -> Result<(Option<Design>, FieldSample), CliError> {
            match &shared {
                Some(d) => Ok((None, d.sample(meta.seed, r)?)),
                None => {
                    let d = Design::build(n, &params, &cfg, meta.seed, Some(r))?;
                    let sample = d.sample(meta.seed, r)?;
                    Ok((Some(d), sample))
                }
            }
        };
        for (chunk, results) in
            ids.chunks(common.workers.max(1))
                .zip(fan_out(&ids, common.workers, job))
        {
            for (&r, result) in chunk.iter().zip(results) {
                let (own, sample) = result?;
                let design = own.as_ref().or(shared.as_ref()).expect("a design exists");
                write_field(&mut table, design, &sample, r)?;
            }
        }
    }
    Ok(path)
}

fn write_field(
    table: &mut Table,
    design: &Design,
    sample: &FieldSample,
    replicate: u64,
) -> Result<(), CliError> {
    let first_grid = design
        .grid_index
        .first()
        .copied()
        .unwrap_or(design.points.len());
    let argmax = sample.record().argmax();
    for (i, (p, eta)) in design.points.iter().zip(sample.eta()).enumerate() {
        let kind = if i < first_grid { "site" } else { "grid" };
        table.row([
            float(design.intensity),
            replicate.to_string(),
            i.to_string(),
            kind.to_string(),
            float(p[0]),
            float(p[1]),
            float(*eta),
            argmax[i].to_string(),
        ])?;
    }
    Ok(())
}

/// A stored estimate row, as read back for resuming and summarising.
#[derive(Debug, Deserialize)]
struct StoredRow {
    config_hash: String,
    seed: u64,
    replicate: u64,
    intensity: f64,
    sigma2_pair: Option<f64>,
    sigma2_triple: Option<f64>,
    alpha_pair: Option<f64>,
    alpha_triple: Option<f64>,
    v2: Option<f64>,
    v3: Option<f64>,
    local_time: Option<f64>,
    edges: usize,
    triangles: usize,
    retained: usize,
    boundary_hits: u32,
    wall_time_s: f64,
    error: Option<String>,
}

impl From<StoredRow> for ResultRow {
    fn from(s: StoredRow) -> Self {
        ResultRow {
            replicate: s.replicate,
            intensity: s.intensity,
            sigma2_pair: s.sigma2_pair,
            sigma2_triple: s.sigma2_triple,
            alpha_pair: s.alpha_pair,
            alpha_triple: s.alpha_triple,
            v2: s.v2,
            v3: s.v3,
            local_time: s.local_time,
            edges: s.edges,
            triangles: s.triangles,
            retained: s.retained,
            boundary_hits: s.boundary_hits,
            wall_time_s: s.wall_time_s,
            error: s.error.filter(|e| !e.is_empty()),
        }
    }
}

fn estimate_fields(row: &ResultRow) -> [String; 15] {
    [
        row.replicate.to_string(),
        float(row.intensity),
        opt_float(row.sigma2_pair),
        opt_float(row.sigma2_triple),
        opt_float(row.alpha_pair),
        opt_float(row.alpha_triple),
        opt_float(row.v2),
        opt_float(row.v3),
        opt_float(row.local_time),
        row.edges.to_string(),
        row.triangles.to_string(),
        row.retained.to_string(),
        row.boundary_hits.to_string(),
        float(row.wall_time_s),
        row.error.clone().unwrap_or_default(),
    ]
}

/// Reads an existing estimates table, refusing one written under another
/// configuration or seed.
fn read_estimates(path: &Path, meta: &RunMeta) -> Result<Vec<ResultRow>, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let expected: Vec<&str> = META_COLUMNS
        .iter()
        .chain(&ESTIMATE_COLUMNS)
        .copied()
        .collect();
    if reader.headers()?.iter().collect::<Vec<_>>() != expected {
        return Err(CliError::Config(format!(
            "{}: unexpected header, not an estimates table",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for stored in reader.deserialize::<StoredRow>() {
        let stored = stored?;
        if stored.config_hash != meta.config_hash || stored.seed != meta.seed {
            return Err(CliError::Config(format!(
                "{} holds results for another configuration or seed; choose a fresh --out",
                path.display()
            )));
        }
        rows.push(stored.into());
    }
    Ok(rows)
}

/// Runs every replicate not yet present in the estimates table, appending
/// rows as they finish, then writes the summary reports.
pub fn estimate(common: &Common) -> Result<PathBuf, CliError> {
    let (cfg, meta) = experiment_config(common)?;
    let dir = out_dir(common)?;
    let path = dir.join(ESTIMATE_FILE);
    let done: HashSet<(u64, u64)> = if path.exists() {
        read_estimates(&path, &meta)?
            .iter()
            .map(|r| (r.intensity.to_bits(), r.replicate))
            .collect()
    } else {
        Table::create(&path, &ESTIMATE_COLUMNS, &meta)?;
        HashSet::new()
    };
    write_sidecar(&path, "estimate", &meta, &cfg)?;
    let mut table = Table::append(&path, &meta)?;
    for &n in &cfg.intensities {
        let ids: Vec<u64> = (0..cfg.replicates)
            .filter(|r| !done.contains(&(n.to_bits(), *r)))
            .collect();
        let mut write_error = None;
        let run = run_intensity(n, &cfg, meta.seed, &ids, common.workers, |row| {
            table.row(estimate_fields(&row)).map_err(|e| {
                let message = e.to_string();
                write_error = Some(e);
                br_infill::error::Error::Config(message)
            })
        });
        if let Some(e) = write_error {
            return Err(e);
        }
        run?;
    }
    drop(table);
    let rows = read_estimates(&path, &meta)?;
    write_summary(&dir.join(SUMMARY_FILE), &cfg, &meta, &rows)?;
    Ok(path)
}

#[derive(Serialize)]
struct Summary<T: Serialize, U: Serialize> {
    version: &'static str,
    seed: u64,
    config_hash: String,
    rows: usize,
    local_time: Outcome<T>,
    rates: Outcome<U>,
}

#[derive(Serialize)]
#[serde(rename_all = "lowercase")]
enum Outcome<T: Serialize> {
    Report(T),
    Unavailable(String),
}

impl<T: Serialize> Outcome<T> {
    fn from<E: ToString>(r: Result<T, E>) -> Self {
        match r {
            Ok(t) => Outcome::Report(t),
            Err(e) => Outcome::Unavailable(e.to_string()),
        }
    }
}

fn write_summary(
    path: &Path,
    cfg: &ExperimentConfig,
    meta: &RunMeta,
    rows: &[ResultRow],
) -> Result<(), CliError> {
    let summary = Summary {
        version: br_infill::VERSION,
        seed: meta.seed,
        config_hash: meta.config_hash.clone(),
        rows: rows.len(),
        local_time: Outcome::from(local_time_report(rows, cfg.alpha0)),
        rates: Outcome::from(rate_report(rows, cfg.sigma0, cfg.alpha0)),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs one acceptance suite and writes its report. Returns the reports so
/// the caller can set the exit status.
pub fn verify(common: &Common, suite: Suite) -> Result<(PathBuf, Vec<CriterionReport>), CliError> {
    let raw = RawConfig::load(common.config.as_deref())?;
    let seed = raw.seed(common.seed);
    let mut opts: VerifyOptions = raw.parse()?;
    opts.seed = seed;
    opts.workers = common.workers.max(1);
    let meta = RunMeta {
        config_hash: config_hash(&opts),
        seed,
    };
    let path = out_dir(common)?.join(format!("verify_{suite}.csv"));
    write_sidecar(&path, "verify", &meta, &opts)?;
    let reports = run_suite(suite, &opts);
    let mut table = Table::create(&path, &VERIFY_COLUMNS, &meta)?;
    for r in &reports {
        table.row([
            suite.name().to_string(),
            r.id.clone(),
            r.passed.to_string(),
            float(r.wall_time_s),
            r.detail.clone(),
        ])?;
    }
    Ok((path, reports))
}

/// Settings for the typical-cell dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypicalCellConfig {
    #[serde(default = "default_samples")]
    pub samples: u64,
}

fn default_samples() -> u64 {
    10_000
}

/// Draws typical Delaunay cells: circumradius, vertex directions, area and
/// the length of the first edge.
pub fn typical_cell(common: &Common) -> Result<PathBuf, CliError> {
    let raw = RawConfig::load(common.config.as_deref())?;
    let seed = raw.seed(common.seed);
    let cfg: TypicalCellConfig = raw.parse()?;
    let meta = RunMeta {
        config_hash: config_hash(&cfg),
        seed,
    };
    let path = out_dir(common)?.join(TYPICAL_CELL_FILE);
    write_sidecar(&path, "typical-cell", &meta, &cfg)?;
    let mut table = Table::create(&path, &TYPICAL_CELL_COLUMNS, &meta)?;
    let blocks: Vec<u64> = (0..cfg.samples.div_ceil(CELL_BLOCK)).collect();
    let draw = |b: u64| {
        let mut rng = stream(seed, b, Purpose::TypicalCell);
        let count = CELL_BLOCK.min(cfg.samples - b * CELL_BLOCK);
        (0..count)
            .map(|_| sample_typical_cell(&mut rng))
            .collect::<Vec<_>>()
    };
    let mut index = 0u64;
    for cells in fan_out(&blocks, common.workers, draw).into_iter().flatten() {
        for c in cells {
            table.row([
                index.to_string(),
                float(c.radius),
                float(c.angles[0]),
                float(c.angles[1]),
                float(c.angles[2]),
                float(c.area()),
                float(c.edge_length()),
                c.trials.to_string(),
            ])?;
            index += 1;
        }
    }
    Ok(path)
}
