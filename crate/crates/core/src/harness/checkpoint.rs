use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    estimate_energy, evaluate, inference_counts, model_config, prepare_data, spike_mode,
    EnergyReport, Metrics, RunConfig, Seeds, TrainOutcome,
};
use crate::error::{Error, Result};
use crate::model::{Model, ModelParams};

/// Trained parameters together with the configuration that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn from_outcome(config: &RunConfig, outcome: &TrainOutcome) -> Self {
        Self {
            config: config.clone(),
            params: outcome.model.params.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(self)?;
        fs::write(path, body).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&body)?)
    }

    /// Rebuilds the data and model of the run and evaluates them exactly as
    /// training did.
    pub fn evaluate(&self) -> Result<(Metrics, EnergyReport)> {
        self.config.validate()?;
        let data = prepare_data(&self.config)?;
        let model = Model::from_params(model_config(&self.config, &data)?, self.params.clone())?;
        let outcome = TrainOutcome {
            model,
            trace: Vec::new(),
            best_epoch: None,
            aborted: None,
            data,
            eval_mode: spike_mode(&self.config, Seeds::new(self.config.seed).eval),
        };
        let metrics = evaluate(&outcome)?;
        let counts = inference_counts(&outcome, &outcome.eval_mode)?;
        Ok((metrics, estimate_energy(&counts, &self.config.energy)))
    }
}
