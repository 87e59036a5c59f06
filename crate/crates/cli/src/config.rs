//! JSON config files for each subcommand. Every struct rejects unknown keys
//! so that a typo such as `lamda` fails loudly instead of being ignored.

use std::fmt;
use std::path::{Path, PathBuf};

use rince_lab::divergence::HeadChoice;
use rince_lab::train::{SweepGrid, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config {}: {}", self.path.display(), self.message)
    }
}

/// Parse `path`, or fall back to the default when no path was given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, ConfigError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        message: format!("cannot read file: {e}"),
    })?;
    serde_json::from_str(&text).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        message: format!("invalid config: {e}"),
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub base: TrainConfig,
    pub grid: SweepGrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    /// Number of randomly initialised encoders.
    pub encoders: usize,
    /// Data seeds per encoder.
    pub seeds: Vec<u64>,
    pub etas: Vec<f64>,
    pub lambda: f64,
    pub k: usize,
    pub temperature: f64,
    /// Pairs per empirical distribution.
    pub pairs: usize,
    pub head: HeadChoice,
    pub widths: Vec<usize>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            encoders: 20,
            seeds: (0..5).collect(),
            etas: vec![0.0, 0.5],
            lambda: 0.5,
            k: 2,
            temperature: 1.0,
            pairs: 64,
            head: HeadChoice::Identity,
            widths: vec![16, 32, 8],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RiskConfig {
    pub instances: usize,
    pub s_max: f64,
    /// Instances for the logistic-vs-exponential demonstration.
    pub demo_instances: usize,
    pub demo_eta: f64,
}

impl Default for RiskConfig {
    fn default() -> Self {
        Self {
            instances: 200,
            s_max: 1.0,
            demo_instances: 200,
            demo_eta: 0.4,
        }
    }
}
