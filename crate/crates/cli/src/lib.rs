//! Command-line front end for the HOM group-index simulator.
//!
//! A run reads one TOML config (or a shipped preset), executes the selected campaign and
//! writes CSV files plus `summary.json` into the output directory. The summary carries the
//! schema version and the SHA-256 of the effective config so results can be traced to the
//! exact inputs.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use commands::{cmd_dip, cmd_measure, cmd_spectrum, cmd_sweep};
pub use config::{Campaign, RunConfig, SCHEMA_VERSION};
pub use error::CliError;

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub command: Campaign,
    pub seed: u64,
    pub config_sha256: String,
    pub report: serde_json::Value,
}

/// Hex SHA-256 of the effective config, after overrides.
pub fn config_hash(cfg: &RunConfig) -> Result<String, CliError> {
    let text = toml::to_string(cfg).map_err(|e| CliError::Config {
        path: "config".into(),
        message: format!("cannot serialize effective config: {e}"),
    })?;
    Ok(Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect())
}

fn to_json<T: Serialize>(report: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(report).map_err(|e| CliError::Config {
        path: "report".into(),
        message: e.to_string(),
    })
}

/// Run the campaign of `cfg`, writing outputs into `out` when given.
pub fn execute(cfg: &RunConfig, out: Option<&Path>) -> Result<Summary, CliError> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let report = match cfg.campaign {
        Campaign::Spectrum => to_json(&cmd_spectrum(cfg, out)?)?,
        Campaign::Dip => to_json(&cmd_dip(cfg, out)?)?,
        Campaign::Measure => to_json(&cmd_measure(cfg, out)?)?,
        Campaign::Sweep => to_json(&cmd_sweep(cfg, out)?)?,
    };
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        command: cfg.campaign,
        seed: cfg.seed,
        config_sha256: config_hash(cfg)?,
        report,
    };
    if let Some(dir) = out {
        let path: PathBuf = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Config {
            path: "summary".into(),
            message: e.to_string(),
        })?;
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    }
    Ok(summary)
}

/// Load a config from a file or a preset and apply a seed override.
pub fn load_config(path: Option<&Path>, preset: Option<&str>, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let text = match (path, preset) {
        (Some(p), None) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
        (None, Some(name)) => config::preset(name)?.to_string(),
        _ => {
            return Err(CliError::Config {
                path: "--config/--preset".into(),
                message: "give exactly one of --config or --preset".into(),
            })
        }
    };
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}
