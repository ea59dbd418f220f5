//! Declarative TOML experiment configs: an `[env]` section picks the
//! environment, `[dataset]` the batch sampling, `[sweep]` the methods and
//! eps grid, and `[qlearn]` the model-free run. Example files ship under
//! `configs/`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environments::EnvSpec;
use crate::error::{Error, Result};
use crate::experiments::{
    DatasetConfig, MethodSpec, PosteriorSamplingConfig, SweepConfig,
};
use crate::model_free::{BaselineMode, QLearnConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileConfig {
    pub env: EnvSpec,
    pub dataset: Option<DatasetConfig>,
    pub sweep: Option<SweepSection>,
    pub posterior_sampling: Option<PosteriorSamplingConfig>,
    pub qlearn: Option<QlearnSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSection {
    pub methods: Vec<MethodSpec>,
    /// Explicit grid; alternatively give `eps_step` for `0, step, ..., 1`.
    pub eps_grid: Option<Vec<f64>>,
    pub eps_step: Option<f64>,
    pub n_datasets: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QlearnSection {
    pub step_size: f64,
    pub behavior_exploration: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub sim_cap: usize,
    pub seed: u64,
    /// `regularized`, `standard`, or `constant_prob`.
    pub mode: String,
    /// Simulation probability for `constant_prob` mode.
    pub p: f64,
    /// Independent runs (seeds derived from `seed`).
    pub n_runs: usize,
}

impl Default for QlearnSection {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            behavior_exploration: 0.1,
            episodes: 200,
            steps_per_episode: 100,
            sim_cap: 10,
            seed: 0,
            mode: "regularized".into(),
            p: 0.0,
            n_runs: 1,
        }
    }
}

/// Q-learning run mode resolved from a config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QlearnMode {
    Regularized,
    Baseline(BaselineMode),
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Assembles the sweep config; `seed_override` replaces the dataset seed.
    pub fn to_sweep_config(&self, seed_override: Option<u64>) -> Result<SweepConfig> {
        let dataset = self
            .dataset
            .clone()
            .ok_or_else(|| Error::Config("missing [dataset] section".into()))?;
        let sweep = self
            .sweep
            .clone()
            .ok_or_else(|| Error::Config("missing [sweep] section".into()))?;
        let eps_grid = match (&sweep.eps_grid, sweep.eps_step) {
            (Some(grid), None) => grid.clone(),
            (None, Some(step)) => crate::regularizers::eps_grid_with_step(step)
                .map_err(|e| Error::Config(e.to_string()))?,
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "[sweep] sets both eps_grid and eps_step; pick one".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "[sweep] needs eps_grid or eps_step".into(),
                ))
            }
        };
        let mut dataset = dataset;
        if let Some(seed) = seed_override {
            dataset.seed = seed;
        }
        let cfg = SweepConfig {
            env: self.env.clone(),
            methods: sweep.methods,
            eps_grid,
            n_datasets: sweep.n_datasets,
            dataset,
            posterior_sampling: self.posterior_sampling.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_qlearn(&self, seed_override: Option<u64>) -> Result<(QLearnConfig, QlearnMode, usize)> {
        let section = self
            .qlearn
            .clone()
            .ok_or_else(|| Error::Config("missing [qlearn] section".into()))?;
        let mode = match section.mode.as_str() {
            "regularized" => QlearnMode::Regularized,
            "standard" => QlearnMode::Baseline(BaselineMode::Standard),
            "constant_prob" => QlearnMode::Baseline(BaselineMode::ConstantProb(section.p)),
            other => {
                return Err(Error::Config(format!(
                    "unknown qlearn mode '{other}' (expected regularized, standard, constant_prob)"
                )))
            }
        };
        if section.n_runs == 0 {
            return Err(Error::Config("qlearn n_runs must be >= 1".into()));
        }
        let cfg = QLearnConfig {
            step_size: section.step_size,
            behavior_exploration: section.behavior_exploration,
            episodes: section.episodes,
            steps_per_episode: section.steps_per_episode,
            t_reg: None,
            sim_cap: section.sim_cap,
            seed: seed_override.unwrap_or(section.seed),
            initial_counts: None,
        };
        Ok((cfg, mode, section.n_runs))
    }
}
