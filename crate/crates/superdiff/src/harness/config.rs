//! JSON experiment configuration.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::IntegratorConfig;
use crate::schedule::Schedule;
use crate::score::{GmmParams, GmmScoreModel, GridScoreModel, MlpScoreModel, ScoreModel};
use crate::superpose::SuperposeMode;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Sample,
    OrMixture,
    AndEqualDensity,
    EstimatorValidation,
    HutchinsonCompare,
    DsmTrain,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Sample => "sample",
            ExperimentKind::OrMixture => "or_mixture",
            ExperimentKind::AndEqualDensity => "and_equal_density",
            ExperimentKind::EstimatorValidation => "estimator_validation",
            ExperimentKind::HutchinsonCompare => "hutchinson_compare",
            ExperimentKind::DsmTrain => "dsm_train",
        }
    }
}

/// One score model in a config: inline mixture parameters or a model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Gmm {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        stddevs: Vec<f64>,
    },
    Grid {
        path: PathBuf,
    },
    Mlp {
        path: PathBuf,
    },
}

impl ModelSpec {
    pub fn build(&self, schedule: &Schedule) -> Result<Arc<dyn ScoreModel>> {
        match self {
            ModelSpec::Gmm {
                weights,
                means,
                stddevs,
            } => {
                let params = GmmParams::new(weights.clone(), means.clone(), stddevs.clone())?;
                Ok(Arc::new(GmmScoreModel::new(params, *schedule)?))
            }
            ModelSpec::Grid { path } => {
                check_exists(path)?;
                Ok(Arc::new(GridScoreModel::load(path)?))
            }
            ModelSpec::Mlp { path } => {
                check_exists(path)?;
                Ok(Arc::new(MlpScoreModel::load(path)?))
            }
        }
    }

    /// Inline mixture parameters, when this spec is a GMM.
    pub fn gmm_params(&self) -> Option<GmmParams> {
        match self {
            ModelSpec::Gmm {
                weights,
                means,
                stddevs,
            } => GmmParams::new(weights.clone(), means.clone(), stddevs.clone()).ok(),
            _ => None,
        }
    }
}

fn check_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "referenced path does not exist: {}",
            path.display()
        )))
    }
}

/// Training block for the dsm_train experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSpec {
    pub dataset: Vec<Vec<f64>>,
    #[serde(default = "default_train_steps")]
    pub steps: usize,
    #[serde(default = "default_train_batch")]
    pub batch: usize,
    #[serde(default = "default_train_step_size")]
    pub step_size: f64,
}

fn default_train_steps() -> usize {
    4000
}
fn default_train_batch() -> usize {
    96
}
fn default_train_step_size() -> f64 {
    2e-3
}

impl TrainSpec {
    pub fn to_train_config(&self, schedule: Schedule, seed: u64) -> TrainConfig {
        TrainConfig {
            dataset: self.dataset.clone(),
            steps: self.steps,
            batch: self.batch,
            step_size: self.step_size,
            seed,
            schedule,
        }
    }
}

/// Full experiment description, loaded from one JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub schedule: Schedule,
    #[serde(default)]
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub mode: Option<SuperposeMode>,
    pub integrator: IntegratorConfig,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// How many trajectories get full per-step records in trace.csv.
    #[serde(default = "default_trace_samples")]
    pub trace_samples: usize,
    #[serde(default)]
    pub train: Option<TrainSpec>,
}

fn default_n_samples() -> usize {
    1000
}
fn default_trace_samples() -> usize {
    8
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| {
            Error::InvalidConfig(format!("failed to parse {}: {e}", path.display()))
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be ≥ 1".into()));
        }
        if let Some(mode) = &self.mode {
            if !self.models.is_empty() {
                mode.validate(self.models.len())?;
            }
            if matches!(mode, SuperposeMode::And { .. }) && self.integrator.effective_ode() {
                return Err(Error::InvalidConfig(
                    "equal-density mode requires SDE inference".into(),
                ));
            }
        }
        if self.experiment == ExperimentKind::DsmTrain && self.train.is_none() {
            return Err(Error::InvalidConfig(
                "dsm_train experiment needs a train block".into(),
            ));
        }
        Ok(())
    }

    pub fn build_models(&self) -> Result<Vec<Arc<dyn ScoreModel>>> {
        self.models
            .iter()
            .map(|spec| spec.build(&self.schedule))
            .collect()
    }
}
