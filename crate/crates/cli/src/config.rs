//! Optional TOML configuration. Every key mirrors a long flag with dashes
//! replaced by underscores; flags given on the command line win.

use std::path::{Path, PathBuf};

use fdi_core::power::LoadDisturbanceParams;
use fdi_core::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub fault: Option<usize>,

    pub d_n: Option<usize>,
    pub root: Option<f64>,
    pub multiplicity: Option<usize>,
    pub k: Option<usize>,
    pub horizon: Option<f64>,
    pub gram: Option<String>,
    pub signature: Option<String>,

    pub perspective: Option<String>,
    pub scenarios: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub beta: Option<f64>,
    pub allow_insufficient: Option<bool>,

    pub draws: Option<usize>,
    pub patterns: Option<Vec<Vec<usize>>>,
    pub dt: Option<f64>,
    pub load: Option<LoadDisturbanceParams>,

    pub filters: Option<Vec<String>>,
    pub loads: Option<Vec<String>>,
    pub t_load: Option<f64>,
    pub t_ack: Option<f64>,
    pub sim_horizon: Option<f64>,
    pub attack: Option<f64>,
    pub attack_omega: Option<f64>,
    pub window: Option<f64>,
    pub linearized: Option<bool>,
    pub trials: Option<usize>,
    pub nodes_per_trial: Option<usize>,

    pub pool: Option<usize>,
    pub schedule: Option<Vec<usize>>,
    pub directions: Option<usize>,
    pub replicates: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// Flag, else config value, else default.
pub fn pick<T: Clone>(flag: Option<T>, config: &Option<T>, default: T) -> T {
    flag.or_else(|| config.clone()).unwrap_or(default)
}

pub fn pick_opt<T: Clone>(flag: Option<T>, config: &Option<T>) -> Option<T> {
    flag.or_else(|| config.clone())
}
