use serde::Serialize;
use serde_json::Value;

use crate::config::Config;
use crate::error::Result;

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Value,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        subcommand: &str,
        cfg: &Config,
        threads: usize,
        wall_time_seconds: f64,
        outputs: Vec<String>,
    ) -> Result<Self> {
        Ok(RunManifest {
            subcommand: subcommand.into(),
            config: serde_json::to_value(cfg)?,
            config_hash: cfg.hash()?,
            seed: cfg.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            threads,
            wall_time_seconds,
            outputs,
        })
    }

    pub fn file_name(subcommand: &str) -> String {
        format!("{subcommand}.manifest.json")
    }
}
