//! Experiment driver: configuration, runs, sweeps, comparison tables and
//! diagnostics for the `wfl` binary.

// NaN must fail range checks, so `!(x > 0.0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod compare;
pub mod config;
pub mod debug;
pub mod runner;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use config::{parse_config, ConfigError, ExperimentConfig, SchedulerId};
pub use runner::{execute, run_experiment, RunError, RunOutput};

/// Runs the base document once per value of `key`, in parallel. Each run
/// writes to `out/<key>=<value>`.
pub fn run_sweep(
    base: &serde_json::Value,
    key: &str,
    values: &[serde_json::Value],
    out: &Path,
) -> Result<Vec<PathBuf>, SweepError> {
    let configs: Vec<(PathBuf, ExperimentConfig)> = values
        .iter()
        .map(|v| {
            let mut doc = base.clone();
            config::set_path(&mut doc, key, v.clone())?;
            let label = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            Ok((out.join(format!("{key}={label}")), config::from_value(doc)?))
        })
        .collect::<Result<_, ConfigError>>()?;
    configs
        .par_iter()
        .map(|(dir, cfg)| run_experiment(cfg, dir).map(|_| dir.clone()))
        .collect::<Result<_, _>>()
        .map_err(SweepError::Run)
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(RunError),
}
