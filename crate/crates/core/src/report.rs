//! Structured run reports: configuration echo, per-stage statistics,
//! invariant checks, and a manifest of every emitted file with its content
//! hash. Serialized as TOML next to the result files.

use crate::cell::PermeabilitySet;
use crate::config::RunConfig;
use crate::error::ConfigError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Serialize)]
pub struct StageReport {
    pub name: String,
    pub iterations: usize,
    pub residual: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub allowed: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PermeabilityEcho {
    #[serde(rename = "K1")]
    pub k1: [f64; 4],
    #[serde(rename = "K2")]
    pub k2: [f64; 4],
    #[serde(rename = "L1")]
    pub l1: [f64; 4],
    #[serde(rename = "L2")]
    pub l2: [f64; 4],
    pub fingerprint: String,
    pub cached: bool,
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub version: String,
    pub command: String,
    pub config: RunConfig,
    pub stages: Vec<StageReport>,
    pub checks: Vec<CheckReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permeability: Option<PermeabilityEcho>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scaling: Option<crate::resolved::ScalingReport>,
    pub files: Vec<FileEntry>,
}

fn flatten(m: &[[f64; 2]; 2]) -> [f64; 4] {
    [m[0][0], m[0][1], m[1][0], m[1][1]]
}

impl RunReport {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunReport {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            stages: Vec::new(),
            checks: Vec::new(),
            permeability: None,
            scaling: None,
            files: Vec::new(),
        }
    }

    pub fn record_permeability(&mut self, perm: &PermeabilitySet, cached: bool) {
        self.permeability = Some(PermeabilityEcho {
            k1: flatten(&perm.k1),
            k2: flatten(&perm.k2),
            l1: flatten(&perm.l1),
            l2: flatten(&perm.l2),
            fingerprint: perm.fingerprint.clone(),
            cached,
        });
    }

    pub fn record_check(&mut self, name: &str, value: f64, allowed: f64) -> bool {
        let passed = value <= allowed;
        self.checks.push(CheckReport { name: name.to_string(), passed, value, allowed });
        passed
    }

    pub fn all_checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Hash an emitted file into the manifest.
    pub fn record_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
        let mut h = Sha256::new();
        h.update(&bytes);
        let digest = h.finalize();
        self.files.push(FileEntry {
            path: path.display().to_string(),
            sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
        });
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml_string())
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })
    }
}

/// Measure a stage's wall time and pack its solver stats.
pub fn timed_stage<T, E>(
    name: &str,
    run: impl FnOnce() -> Result<T, E>,
    stats_of: impl Fn(&T) -> (usize, f64),
) -> Result<(T, StageReport), E> {
    let start = Instant::now();
    let value = run()?;
    let wall_seconds = start.elapsed().as_secs_f64();
    let (iterations, residual) = stats_of(&value);
    Ok((
        value,
        StageReport { name: name.to_string(), iterations, residual, wall_seconds },
    ))
}
