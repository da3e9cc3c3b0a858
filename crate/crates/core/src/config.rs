//! TOML configuration files for detection runs and simulations.
//!
//! Detection config:
//!
//! ```toml
//! exclusion_tau = 1.0
//! progress_method = "hitting_time"
//!
//! [task]
//! pages = ["S", "M", "F"]
//! begin = "S"
//! final = "F"
//!
//! [detection]
//! epsilon = 0.8
//! window_ms = 120000
//! score_formula = "consistent"
//! feature_combine = "max"
//! ```
//!
//! Simulation config repeats `[task]`, lists the ground-truth chain as
//! `[[transitions]]` with integer weights, and adds a `[simulation]` table.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::detect::DetectionConfig;
use crate::model::{ModelConfig, ProgressMethod, TransitionModel};
use crate::simulate::SimConfig;
use crate::types::{validate_task, PageId, TaskSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppConfig {
    pub task: TaskSpec,
    pub detection: DetectionConfig,
    pub model: ModelConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAppConfig {
    task: TaskSpec,
    #[serde(default)]
    detection: DetectionConfig,
    #[serde(default = "default_tau")]
    exclusion_tau: f64,
    #[serde(default)]
    progress_method: ProgressMethod,
}

fn default_tau() -> f64 {
    1.0
}

impl AppConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw: RawAppConfig = toml::from_str(text)?;
        let task = validate_task(raw.task).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        raw.detection
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let model = ModelConfig {
            progress_method: raw.progress_method,
            exclusion_tau: raw.exclusion_tau,
        };
        model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Self {
            task,
            detection: raw.detection,
            model,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&read(path)?)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEdge {
    from: PageId,
    to: PageId,
    weight: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    n_users: usize,
    failure_rate: f64,
    failure_page: PageId,
    retry_min: Option<u32>,
    retry_max: Option<u32>,
    retry_gap_ms_max: Option<u64>,
    normal_gap_mean_ms: Option<u64>,
    max_steps: Option<usize>,
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimConfig {
    task: TaskSpec,
    transitions: Vec<RawEdge>,
    simulation: RawSimulation,
}

pub fn parse_sim_config(text: &str) -> Result<SimConfig, ConfigError> {
    let raw: RawSimConfig = toml::from_str(text)?;
    let task = validate_task(raw.task).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let pages: Vec<PageId> = task.pages.iter().cloned().collect();
    let n = pages.len();
    let mut counts = vec![vec![0u64; n]; n];
    for edge in &raw.transitions {
        let index = |p: &PageId| {
            pages
                .binary_search(p)
                .map_err(|_| ConfigError::Invalid(format!("transition page {p} is not a task page")))
        };
        counts[index(&edge.from)?][index(&edge.to)?] += edge.weight;
    }
    let ground_truth =
        TransitionModel::from_counts(pages, counts).map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let s = raw.simulation;
    let mut config = SimConfig::new(ground_truth, task, s.failure_page);
    config.n_users = s.n_users;
    config.failure_rate = s.failure_rate;
    config.seed = s.seed;
    config.retry_min = s.retry_min.unwrap_or(config.retry_min);
    config.retry_max = s.retry_max.unwrap_or(config.retry_max);
    config.retry_gap_ms_max = s.retry_gap_ms_max.unwrap_or(config.retry_gap_ms_max);
    config.normal_gap_mean_ms = s.normal_gap_mean_ms.unwrap_or(config.normal_gap_mean_ms);
    config.max_steps = s.max_steps.unwrap_or(config.max_steps);
    config
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(config)
}

pub fn load_sim_config(path: &Path) -> Result<SimConfig, ConfigError> {
    parse_sim_config(&read(path)?)
}
