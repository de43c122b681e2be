//! TOML experiment configs.
//!
//! Keys mirror [`ExperimentConfig`] field names, nested tables or dotted
//! keys alike (`crossmix.alpha = 0.3`). Unknown keys are rejected.

use std::path::Path;

use dualshift_core::ExperimentConfig;

use crate::{io_err, write_file, Error, Result};

/// A parsed config plus whether the file set a seed itself, which matters
/// for seed precedence.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub has_seed: bool,
}

pub fn parse_config(text: &str, origin: &Path) -> Result<LoadedConfig> {
    let fail = |message: String| Error::Config {
        path: origin.to_path_buf(),
        message,
    };
    let table: toml::Table = toml::from_str(text).map_err(|e| fail(e.to_string()))?;
    let has_seed = table.contains_key("seed");
    let config: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| fail(e.to_string()))?;
    config.validate().map_err(|e| fail(e.to_string()))?;
    Ok(LoadedConfig { config, has_seed })
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text, path)
}

pub fn to_toml(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("configs serialize to TOML")
}

pub fn save_config(path: &Path, config: &ExperimentConfig) -> Result<()> {
    write_file(path, to_toml(config))
}

/// Seed precedence: command line, then config file, then the
/// `DUALSHIFT_SEED` environment variable, then the config default.
pub fn resolve_seed(
    cli: Option<u64>,
    loaded: &LoadedConfig,
    env: Option<&str>,
) -> std::result::Result<u64, String> {
    if let Some(seed) = cli {
        return Ok(seed);
    }
    if loaded.has_seed {
        return Ok(loaded.config.seed);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("DUALSHIFT_SEED `{v}` is not an unsigned integer")),
        None => Ok(loaded.config.seed),
    }
}
