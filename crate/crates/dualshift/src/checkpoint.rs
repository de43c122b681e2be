//! Self-describing model checkpoints.

use std::path::Path;

use dualshift_core::dalign::{DomainPriors, EmaTracker};
use dualshift_core::trainer::FoldOutcome;
use dualshift_core::{Classifier, ExperimentConfig, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::{io_err, json_err, write_file, Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reuse a trained fold model: weights and
/// normalization state (inside `model`), the alignment state, and the
/// configs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub fold_index: usize,
    pub model_config: ModelConfig,
    pub model: Classifier,
    pub priors: DomainPriors,
    pub tracker: EmaTracker,
    pub experiment: ExperimentConfig,
}

impl Checkpoint {
    pub fn from_fold(outcome: &FoldOutcome, experiment: &ExperimentConfig) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            fold_index: outcome.fold_index,
            model_config: outcome.model.config,
            model: outcome.model.clone(),
            priors: outcome.priors,
            tracker: outcome.tracker.clone(),
            experiment: experiment.clone(),
        }
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_file(path, serde_json::to_vec(checkpoint).map_err(json_err(path))?)
}

/// Loads a checkpoint; gradient buffers come back empty and are sized on
/// the next `zero_grad`.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let checkpoint: Checkpoint = serde_json::from_slice(&bytes).map_err(json_err(path))?;
    if checkpoint.format_version != CHECKPOINT_VERSION {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            found: checkpoint.format_version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(checkpoint)
}
