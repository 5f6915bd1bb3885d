use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnergyReport, EpochRecord, Metrics, RunConfig, TrainOutcome};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// JSON Schema of [`ResultsDoc`].
pub const RESULTS_SCHEMA: &str = include_str!("../../../../docs/results.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsDoc {
    pub schema_version: u32,
    pub seed: u64,
    pub config: RunConfig,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub aborted: Option<String>,
    pub metrics: Metrics,
    pub energy: EnergyReport,
    /// The only field that varies between identical runs.
    pub wall_clock_seconds: f64,
}

impl ResultsDoc {
    pub fn new(
        config: RunConfig,
        outcome: &TrainOutcome,
        metrics: Metrics,
        energy: EnergyReport,
        wall_clock_seconds: f64,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: config.seed,
            config,
            trace: outcome.trace.clone(),
            best_epoch: outcome.best_epoch,
            aborted: outcome.aborted.clone(),
            metrics,
            energy,
            wall_clock_seconds,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn emit_results(doc: &ResultsDoc, path: &Path) -> Result<()> {
    let mut body = doc.to_json()?;
    body.push('\n');
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
