//! JSON run configuration; every field mirrors a command-line flag.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xtalkgst_core::fit::FitConfig;
use xtalkgst_core::models::ModelFamily;

use crate::io::read_json;
use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lmax: Option<usize>,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
    pub families: Option<Vec<ModelFamily>>,
    pub alpha: Option<f64>,
    pub gamma_threshold: Option<f64>,
    pub bootstrap_replicates: Option<usize>,
    pub rb_depths: Option<Vec<usize>>,
    pub rb_per_depth: Option<usize>,
    pub rb_replicates: Option<usize>,
    pub background: Option<f64>,
    pub sweep_points: Option<usize>,
    pub sweep_min: Option<f64>,
    pub sweep_max: Option<f64>,
    pub fit: Option<FitConfig>,
    pub design: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub noise: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => read_json(p),
            None => Ok(Self::default()),
        }
    }
}

/// Flag value if given, else the config file's, else the default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn require<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T, CliError> {
    flag.or(file).ok_or_else(|| CliError::validation(format!("--{name} is required (flag or config file)")))
}
