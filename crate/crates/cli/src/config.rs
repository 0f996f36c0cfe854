//! Per-command JSON configuration and run manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use epikal::inference::FitOptions;
use epikal::simulate::ExtinctionRule;
use epikal::ModelKind;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::Failure;

fn sir_truth() -> BTreeMap<String, f64> {
    [("lambda", 1.0), ("gamma", 1.0 / 3.0), ("i0", 0.01), ("p", 0.8), ("tau", 0.0)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub model: ModelKind,
    pub seed: u64,
    /// True parameter by name.
    pub theta: BTreeMap<String, f64>,
    /// Observed compartment labels; defaults to the last infected one.
    pub observed: Vec<String>,
    pub n_pop: u64,
    pub n_target: usize,
    pub replicates: usize,
    pub rule: ExtinctionRule,
    pub max_attempts: usize,
    /// Also write each trajectory as an event list.
    pub trajectories: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            model: ModelKind::Sir,
            seed: 1,
            theta: sir_truth(),
            observed: Vec::new(),
            n_pop: 2000,
            n_target: 30,
            replicates: 1,
            rule: ExtinctionRule::default(),
            max_attempts: 1000,
            trajectories: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub model: ModelKind,
    pub seed: u64,
    /// Observation CSV, or `boarding-school` for the bundled outbreak.
    pub data: Option<PathBuf>,
    /// Overrides the population size recorded in the data file.
    pub n_pop: Option<f64>,
    /// Starting values; fixed parameters keep these values. A missing
    /// initial proportion of an observed compartment defaults to its first
    /// observation.
    pub guess: BTreeMap<String, f64>,
    /// Estimated parameters; defaults to the rates plus `p` and `tau`.
    pub free: Vec<String>,
    pub options: FitOptions,
    /// Write the state-space system and filter steps at the estimate.
    pub dump_system: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            model: ModelKind::Sir,
            seed: 1,
            data: None,
            n_pop: None,
            guess: BTreeMap::new(),
            free: Vec::new(),
            options: FitOptions::default(),
            dump_system: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub n_pop: Option<f64>,
    pub guess: BTreeMap<String, f64>,
    pub free: Vec<String>,
    pub options: FitOptions,
    /// Profiled parameter.
    pub param: String,
    /// Explicit grid; otherwise `points` values around the estimate.
    pub grid: Option<Vec<f64>>,
    pub points: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            model: ModelKind::Sir,
            seed: 1,
            data: None,
            n_pop: None,
            guess: BTreeMap::new(),
            free: Vec::new(),
            options: FitOptions::default(),
            param: "lambda".into(),
            grid: None,
            points: epikal::inference::DEFAULT_GRID_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpcheckConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub n_pop: Option<f64>,
    /// Parameter to simulate from by name.
    pub theta: BTreeMap<String, f64>,
    /// `fit.json` from an earlier run; its estimates fill in `theta`.
    pub fit: Option<PathBuf>,
    pub n_sims: usize,
    pub rule: ExtinctionRule,
}

impl Default for PpcheckConfig {
    fn default() -> Self {
        PpcheckConfig {
            model: ModelKind::Sir,
            seed: 1,
            data: None,
            n_pop: None,
            theta: BTreeMap::new(),
            fit: None,
            n_sims: 1000,
            rule: ExtinctionRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub model: ModelKind,
    pub seed: u64,
    pub theta: BTreeMap<String, f64>,
    pub observed: Vec<String>,
    pub n_pop: u64,
    pub n_target: usize,
    pub replicates: usize,
    /// Estimated parameters; the rest stay at their true values.
    pub free: Vec<String>,
    pub rule: ExtinctionRule,
    pub max_attempts: usize,
    pub options: FitOptions,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            model: ModelKind::Sir,
            seed: 1,
            theta: sir_truth(),
            observed: Vec::new(),
            n_pop: 10_000,
            n_target: 100,
            replicates: 50,
            free: ["lambda", "gamma", "i0", "p"].map(String::from).to_vec(),
            rule: ExtinctionRule::default(),
            max_attempts: 1000,
            options: FitOptions::default(),
        }
    }
}

/// What every run writes next to its outputs. Passing a manifest back as
/// `--config` reruns the same command with the same settings.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest<C> {
    pub command: String,
    pub version: String,
    pub config: C,
}

/// Reads a command config, accepting either a bare config or a manifest.
pub fn load<C: DeserializeOwned + Default>(path: Option<&Path>, command: &str) -> Result<C, Failure> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let is_manifest = value.get("command").is_some() && value.get("config").is_some();
    if is_manifest {
        let m: Manifest<C> =
            serde_json::from_value(value).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        if m.command != command {
            return Err(Failure::Config(format!(
                "manifest is for `{}`, not `{command}`",
                m.command
            )));
        }
        Ok(m.config)
    } else {
        serde_json::from_value(value).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }
}
