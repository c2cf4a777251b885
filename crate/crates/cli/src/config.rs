//! Run configuration: an optional TOML file whose values are overridden by
//! command-line flags.

use std::path::{Path, PathBuf};

use geolink_core::gazetteer::FeatureCodeMap;
use geolink_core::index::IndexKind;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dump: Option<PathBuf>,
    pub admin1_codes: Option<PathBuf>,
    pub admin2_codes: Option<PathBuf>,
    pub country_info: Option<PathBuf>,
    pub database: Option<PathBuf>,
    pub mentions: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// `test:<dim>:<seed>`, `file:<path>` or `service:<endpoint>[#tag]`.
    pub provider: Option<String>,
    pub pool_size: Option<usize>,
    pub kind: Option<IndexKind>,
    pub variants: Option<bool>,
    pub prune_multiplier: Option<f64>,
    pub prune_exempt_supplemental: Option<bool>,
    pub threshold: Option<f64>,
    pub thresholds: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub test_fraction: Option<f64>,
    pub threads: Option<usize>,
    pub min_population: Option<u64>,
    pub min_country_examples: Option<usize>,
    pub feature_codes: Option<FeatureCodeMap>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))
    }
}

/// Environment variable naming the embedding service endpoint, used when no
/// provider is configured.
pub const ENDPOINT_ENV: &str = "GEOLINK_EMBED_ENDPOINT";

/// `flag` if given, else the config value.
pub fn pick<T: Clone>(flag: Option<T>, config: &Option<T>) -> Option<T> {
    flag.or_else(|| config.clone())
}

pub fn require<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Input(format!("missing required setting `{name}`")))
}

pub fn existing(path: Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    let path = require(path, name)?;
    if !path.exists() {
        return Err(CliError::Input(format!(
            "{name}: {} does not exist",
            path.display()
        )));
    }
    Ok(path)
}

/// Hex SHA-256 of the canonical JSON of `(command, settings)`.
pub fn config_hash(command: &str, settings: &serde_json::Value) -> String {
    let canonical = serde_json::json!({ "command": command, "config": settings });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

/// Write `<output>.run.json` next to an output file, recording the effective
/// settings and their hash.
pub fn write_sidecar(
    output: &Path,
    command: &str,
    settings: serde_json::Value,
) -> Result<String, CliError> {
    let hash = config_hash(command, &settings);
    let record = serde_json::json!({
        "command": command,
        "config": settings,
        "config_hash": hash,
    });
    let mut name = output.as_os_str().to_owned();
    name.push(".run.json");
    let text =
        serde_json::to_string_pretty(&record).map_err(|e| CliError::Internal(e.to_string()))?;
    std::fs::write(&name, text + "\n").map_err(|e| {
        CliError::Input(format!("cannot write {}: {e}", Path::new(&name).display()))
    })?;
    Ok(hash)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_config() {
        let cfg = RunConfig {
            threshold: Some(0.4),
            ..RunConfig::default()
        };
        assert_eq!(pick(Some(0.7), &cfg.threshold), Some(0.7));
        assert_eq!(pick(None, &cfg.threshold), Some(0.4));
        assert_eq!(pick::<f64>(None, &None), None);
    }

    #[test]
    fn parses_toml() {
        let cfg: RunConfig = toml::from_str(
            "provider = \"test:64:1\"\nkind = \"usergeo\"\nthresholds = [0.0, 0.5]\n\n[feature_codes]\ncountry_codes = [\"PCLI\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.kind, Some(IndexKind::UserGeo));
        assert_eq!(cfg.feature_codes.unwrap().country_codes, ["PCLI"]);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = serde_json::json!({"threshold": 0.5});
        let b = serde_json::json!({"threshold": 0.6});
        assert_eq!(config_hash("link", &a), config_hash("link", &a));
        assert_ne!(config_hash("link", &a), config_hash("link", &b));
        assert_ne!(config_hash("link", &a), config_hash("curve", &a));
    }
}
