//! CSV tables and JSON sidecars.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// Provenance columns leading every CSV row.
pub const META_COLUMNS: [&str; 3] = ["config_hash", "seed", "version"];

#[derive(Debug, Clone)]
pub struct RunMeta {
    pub config_hash: String,
    pub seed: u64,
}

impl RunMeta {
    fn fields(&self) -> [String; 3] {
        [
            self.config_hash.clone(),
            self.seed.to_string(),
            br_infill::VERSION.to_string(),
        ]
    }
}

/// 17 significant digits, so every value round-trips exactly.
pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

/// Row-at-a-time CSV writer that prefixes the provenance columns and flushes
/// after every row.
pub struct Table {
    writer: csv::Writer<File>,
    meta: [String; 3],
}

impl Table {
    /// Creates (or truncates) `path` and writes the header.
    pub fn create(path: &Path, columns: &[&str], meta: &RunMeta) -> Result<Self, CliError> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(META_COLUMNS.iter().chain(columns))?;
        writer.flush()?;
        Ok(Self {
            writer,
            meta: meta.fields(),
        })
    }

    /// Opens `path` for appending rows after an existing header.
    pub fn append(path: &Path, meta: &RunMeta) -> Result<Self, CliError> {
        let file = OpenOptions::new().append(true).open(path)?;
        let writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(file);
        Ok(Self {
            writer,
            meta: meta.fields(),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        for m in &self.meta {
            self.writer.write_field(m)?;
        }
        for f in fields {
            self.writer.write_field(f)?;
        }
        self.writer.write_record(None::<&[u8]>)?;
        self.writer.flush()?;
        Ok(())
    }
}

#[derive(Serialize)]
struct Sidecar<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_hash: &'a str,
    config: &'a C,
}

/// Writes `<table>.json` next to a CSV table, echoing the configuration.
pub fn write_sidecar<C: Serialize>(
    table: &Path,
    command: &str,
    meta: &RunMeta,
    config: &C,
) -> Result<PathBuf, CliError> {
    let path = table.with_extension("json");
    let sidecar = Sidecar {
        command,
        version: br_infill::VERSION,
        seed: meta.seed,
        config_hash: &meta.config_hash,
        config,
    };
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}
