//! Run manifests: a JSON record written next to every CLI command's output
//! tying together what ran, on which inputs, with which seed, and what came
//! out. Checksums make silent input drift visible; two runs of the same
//! command on the same inputs differ only in the timing fields.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checksum::{file_sha256, sha256_hex_of};
use crate::error::{Error, Result};

/// Version stamp for output formats; bumped when a file layout changes.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance record for one CLI run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Subcommand name plus the arguments that shaped the run.
    pub command: String,
    pub artifact_version: String,
    pub seed: u64,
    /// Checksum of the effective configuration, when the command takes one.
    pub config_checksum: Option<String>,
    /// Input path → SHA-256 of its bytes.
    pub input_checksums: BTreeMap<String, String>,
    pub output_paths: Vec<String>,
    /// Wall-clock duration of the run in seconds.
    pub duration_seconds: f64,
    /// Seconds since the Unix epoch when the manifest was written.
    pub created_unix: f64,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, seed: u64) -> Self {
        RunManifest {
            command: command.into(),
            artifact_version: ARTIFACT_VERSION.to_string(),
            seed,
            config_checksum: None,
            input_checksums: BTreeMap::new(),
            output_paths: Vec::new(),
            duration_seconds: 0.0,
            created_unix: 0.0,
        }
    }

    /// Checksum an input file into the manifest.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let digest = file_sha256(path)?;
        self.input_checksums
            .insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Checksum the effective configuration bytes.
    pub fn record_config(&mut self, bytes: &[u8]) {
        self.config_checksum = Some(sha256_hex_of(bytes));
    }

    pub fn record_output(&mut self, path: &Path) {
        self.output_paths.push(path.display().to_string());
    }

    /// Stamp the timing fields from a run's start instant.
    pub fn finish(&mut self, started: Instant) {
        self.duration_seconds = started.elapsed().as_secs_f64();
        self.created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
    }

    /// Copy with the timing fields zeroed — what "the same run" means when
    /// comparing manifests from different invocations.
    pub fn normalized(&self) -> Self {
        RunManifest {
            duration_seconds: 0.0,
            created_unix: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Internal(format!("manifest serialization: {e}")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(Error::from)
    }
}
