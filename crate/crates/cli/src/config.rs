//! Resolved run configurations.
//!
//! Flags are collected into a TOML table, a `--config` file is merged over
//! it (file values win), and the result is deserialized into the command's
//! config with defaults for anything still missing. The resolved config is
//! written beside the outputs; passing it back via `--config` reruns the
//! command bit for bit.

use std::path::{Path, PathBuf};

use oscmix_core::summary::Criterion;
use oscmix_core::SamplerConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

/// Sampling rate assumed by `--eeg-preset`.
pub const EEG_SAMPLING_RATE: f64 = 256.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Built-in scenario name (`ar2mix`, `misspec`) or path to a scenario TOML file.
    pub scenario: String,
    #[serde(rename = "T", default = "default_len")]
    pub len: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default)]
    pub seed: u64,
    /// Scale every channel to zero mean and unit variance before fitting.
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummarizeConfig {
    /// Trace files, or directories whose `chain_*.csv` files are read.
    pub traces: Vec<PathBuf>,
    pub out: PathBuf,
    #[serde(default = "default_burnin")]
    pub burnin: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default = "default_min_weight")]
    pub min_weight: f64,
    #[serde(default)]
    pub sampling_rate: Option<f64>,
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default)]
    pub criterion: Criterion,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Pointwise posterior mean of the fitted mixture.
    Mbmard,
    /// Box-smoothed cross-periodogram.
    Periodogram,
    /// The true spectrum itself (a zero-error sanity row).
    Truth,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Mbmard => "mbmard",
            Method::Periodogram => "periodogram",
            Method::Truth => "truth",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    pub scenario: String,
    #[serde(rename = "T", default = "default_len")]
    pub len: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_eval_burnin")]
    pub burnin: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Smoothing half-width of the periodogram baseline (0 = raw).
    #[serde(default)]
    pub baseline_halfwidth: usize,
    #[serde(default = "default_eval_sampler")]
    pub sampler: SamplerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuresConfig {
    pub model: PathBuf,
    pub out: PathBuf,
    /// Channel pairs `(m, l)`; empty means every pair with `m <= l`.
    #[serde(default)]
    pub pairs: Vec<[usize; 2]>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub sampling_rate: Option<f64>,
}

fn default_len() -> usize {
    1000
}
fn default_grid_points() -> usize {
    oscmix_core::sim::DEFAULT_GRID_POINTS
}
fn default_chains() -> usize {
    3
}
fn yes() -> bool {
    true
}
fn default_sampler() -> SamplerConfig {
    SamplerConfig {
        iterations: 50_000,
        ..SamplerConfig::default()
    }
}
fn default_burnin() -> usize {
    30_000
}
fn default_quantile() -> f64 {
    0.95
}
fn default_min_weight() -> f64 {
    0.1
}
fn default_task() -> String {
    "all".into()
}
fn default_restarts() -> usize {
    10
}
fn default_replicates() -> usize {
    100
}
fn default_methods() -> Vec<Method> {
    vec![Method::Mbmard, Method::Periodogram]
}
fn default_eval_burnin() -> usize {
    6_000
}
fn default_eval_sampler() -> SamplerConfig {
    SamplerConfig {
        iterations: 10_000,
        ..SamplerConfig::default()
    }
}

/// Flag values that were actually given, as a TOML table.
#[derive(Default)]
pub struct Flags(Table);

impl Flags {
    pub fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            let value = Value::try_from(v).expect("flag values serialize to TOML");
            insert_path(&mut self.0, key, value);
        }
        self
    }
}

fn insert_path(table: &mut Table, key: &str, value: Value) {
    match key.split_once('.') {
        Some((head, rest)) => {
            let entry = table
                .entry(head.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            if let Value::Table(inner) = entry {
                insert_path(inner, rest, value);
            }
        }
        None => {
            table.insert(key.to_string(), value);
        }
    }
}

/// Recursively merges `overlay` into `base`; overlay values win.
pub fn merge(base: &mut Table, overlay: Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Merges the config file (if any) over the flags and deserializes.
pub fn resolve<T: DeserializeOwned>(flags: Flags, file: Option<&Path>) -> Result<T, CliError> {
    let mut table = flags.0;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let overlay: Table =
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        merge(&mut table, overlay);
    }
    T::deserialize(table).map_err(|e| CliError::Usage(format!("configuration: {e}")))
}

/// Absolute form of a path, so a written config works from any directory.
pub fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn to_toml<T: Serialize>(config: &T) -> String {
    toml::to_string(config).expect("resolved configs serialize to TOML")
}

/// `--sampling-rate` wins; `--eeg-preset` supplies 256 Hz otherwise.
pub fn sampling_rate(explicit: Option<f64>, eeg_preset: bool) -> Option<f64> {
    explicit.or(eeg_preset.then_some(EEG_SAMPLING_RATE))
}
