//! Loading flat TOML configuration files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Seed used when neither `--seed` nor a `seed` key is given.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// A parsed configuration table with the seed already taken out.
#[derive(Debug, Default)]
pub struct RawConfig {
    table: toml::Table,
    origin: String,
    seed: Option<u64>,
}

impl RawConfig {
    /// Reads `path`, or starts from an empty table when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self {
                origin: "<defaults>".into(),
                ..Self::default()
            });
        };
        let origin = path.display().to_string();
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        let seed = match table.remove("seed") {
            None => None,
            Some(toml::Value::Integer(s)) if s >= 0 => Some(s as u64),
            Some(other) => {
                return Err(CliError::Config(format!(
                    "{origin}: key `seed` must be a non-negative integer, got {other}"
                )))
            }
        };
        Ok(Self {
            table,
            origin,
            seed,
        })
    }

    /// Command-line seed, else the file's seed, else the default.
    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(DEFAULT_SEED)
    }

    pub fn parse<T: DeserializeOwned>(self) -> Result<T, CliError> {
        toml::Value::Table(self.table)
            .try_into()
            .map_err(|e: toml::de::Error| {
                CliError::Config(format!("{}: {}", self.origin, e.message()))
            })
    }
}

/// SHA-256 of the canonical JSON form of a resolved configuration.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("configuration serialises");
    Sha256::digest(json)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use br_infill::experiment::ExperimentConfig;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn missing_key_is_named() {
        let f = write("intensities = [256.0]\nreplicates = 1\nalpha0 = 0.5\n");
        let err = RawConfig::load(Some(f.path()))
            .unwrap()
            .parse::<ExperimentConfig>()
            .unwrap_err();
        assert!(err.to_string().contains("sigma0"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let f = write(
            "intensities = [256.0]\nreplicates = 1\nsigma0 = 1.0\nalpha0 = 0.5\ncolour = 3\n",
        );
        let err = RawConfig::load(Some(f.path()))
            .unwrap()
            .parse::<ExperimentConfig>()
            .unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn syntax_errors_report_the_line() {
        let f = write("intensities = [256.0]\nreplicates = = 1\n");
        let err = RawConfig::load(Some(f.path())).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn seed_precedence() {
        let f = write("seed = 9\n");
        let raw = RawConfig::load(Some(f.path())).unwrap();
        assert_eq!(raw.seed(None), 9);
        assert_eq!(raw.seed(Some(4)), 4);
        assert_eq!(RawConfig::load(None).unwrap().seed(None), DEFAULT_SEED);
    }

    #[test]
    fn hash_depends_on_values_only() {
        let a = write("intensities = [256.0]\nreplicates = 1\nsigma0 = 1.0\nalpha0 = 0.5\n");
        let b = write("alpha0 = 0.5\nsigma0 = 1.0\n\nreplicates = 1\nintensities = [ 256.0 ]\n");
        let ha = config_hash(
            &RawConfig::load(Some(a.path()))
                .unwrap()
                .parse::<ExperimentConfig>()
                .unwrap(),
        );
        let hb = config_hash(
            &RawConfig::load(Some(b.path()))
                .unwrap()
                .parse::<ExperimentConfig>()
                .unwrap(),
        );
        assert_eq!(ha, hb);
        assert_eq!(ha.len(), 64);
    }
}
