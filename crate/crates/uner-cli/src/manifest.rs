use std::path::Path;
use std::time::Duration;

use serde::Serialize;

use crate::failure::CliResult;

/// Provenance record accompanying every output directory.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: &'static str,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset_fingerprint: Option<String>,
    pub rng_algorithm: &'static str,
    pub duration_secs: f64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            artifact_version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            dataset_fingerprint: None,
            rng_algorithm: uner::rng::RNG_ALGORITHM,
            duration_secs: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn write(mut self, dir: &Path, elapsed: Duration) -> CliResult<()> {
        self.duration_secs = elapsed.as_secs_f64();
        let path = dir.join("manifest.json");
        self.outputs.push("manifest.json".into());
        let json = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, json)?;
        Ok(())
    }
}
