//! Run configuration: one flat TOML file per run.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::drift::DriftSpec;
use crate::error::{CbdiError, Result};
use crate::mechanism::Mechanism;
use crate::passage::Direction;
use crate::simulator::SimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
    Bin,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

/// Subcommand parameters; each subcommand reads the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub x0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    pub direction: Direction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initials: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_probes: Option<Vec<f64>>,
    pub tolerance: f64,
    /// Run the from-infinity diagnostic under `simulate`.
    pub from_infinity: bool,
    /// Second drift for the drift-comparison run under `compare`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift_compare: Option<DriftSpec>,
    /// Grid for `lyapunov`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_grid: Option<Vec<f64>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            x0: 1.0,
            level: None,
            direction: Direction::Below,
            x_grid: None,
            initials: None,
            t_probes: None,
            tolerance: 1e-3,
            from_infinity: false,
            drift_compare: None,
            z_grid: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mechanism: Mechanism,
    pub drift: DriftSpec,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CbdiError::Config(e.to_string()))?;
        cfg.sim.validate()?;
        Ok(cfg)
    }

    /// Accepts a TOML config or the provenance of an earlier run (JSON
    /// output, or CSV with a `#! config=` header line).
    pub fn from_any(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            let v: serde_json::Value = serde_json::from_str(trimmed).map_err(|e| CbdiError::Config(e.to_string()))?;
            let inner = v
                .pointer("/provenance/config")
                .and_then(|c| c.as_str())
                .ok_or_else(|| CbdiError::Config("JSON input has no provenance.config".into()))?;
            return Self::from_toml(inner);
        }
        if trimmed.starts_with("#!") {
            for line in trimmed.lines() {
                if let Some(rest) = line.strip_prefix("#! config=") {
                    let inner: String = serde_json::from_str(rest).map_err(|e| CbdiError::Config(e.to_string()))?;
                    return Self::from_toml(&inner);
                }
            }
            return Err(CbdiError::Config("CSV header has no config line".into()));
        }
        Self::from_toml(text)
    }

    /// Resolved configuration as TOML; feeding it back reproduces the run.
    pub fn canonical(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CbdiError::Config(e.to_string()))
    }

    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
