//! Fine-tuning around a previously trained learner. The attention module
//! always starts fresh; the learner is either trained along with it
//! (global) or frozen (local).

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::AttentionParams;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learner::{load_pretrained, set_frozen, LearnerParams};

use super::{train_afs_from, AfsResult, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReuseMode {
    /// Train attention and learner together.
    Global,
    /// Freeze the learner; train attention only.
    Local,
}

impl FromStr for ReuseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" | "global_tune" => Ok(ReuseMode::Global),
            "local" | "local_tune" => Ok(ReuseMode::Local),
            other => Err(Error::contract(format!("unknown reuse mode `{other}`"))),
        }
    }
}

/// Runs `steps` joint steps from a fresh attention module and the given
/// learner. `config.steps` is ignored in favour of `steps`.
pub fn finetune_reused(
    dataset: &Dataset,
    mut learner: LearnerParams,
    mode: ReuseMode,
    steps: usize,
    config: &TrainConfig,
) -> Result<AfsResult> {
    if learner.config() != &config.learner {
        return Err(Error::contract(format!(
            "reused learner {:?} does not match configured {:?}",
            learner.config(),
            config.learner
        )));
    }
    set_frozen(&mut learner, mode == ReuseMode::Local);
    let config = TrainConfig {
        steps,
        ..config.clone()
    };
    let attention = AttentionParams::init(config.attention, config.attention_seed())?;
    train_afs_from(dataset, &config, attention, learner)
}

/// [`finetune_reused`] with the learner read from a checkpoint file.
pub fn finetune_reused_from_checkpoint(
    dataset: &Dataset,
    checkpoint: &Path,
    mode: ReuseMode,
    steps: usize,
    config: &TrainConfig,
) -> Result<AfsResult> {
    let learner = load_pretrained(checkpoint, &config.learner)?;
    finetune_reused(dataset, learner, mode, steps, config)
}
