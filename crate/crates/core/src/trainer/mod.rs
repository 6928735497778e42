//! Training orchestration: joint attention + learner training, attention
//! pretraining against filter-method weights (hybrid initialisation),
//! fine-tuning around a reused learner, and checkpoint persistence.

mod checkpoint;
mod hybrid;
mod reuse;

pub use checkpoint::{read_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub(crate) use checkpoint::write_atomic;
pub use hybrid::{
    base_weights, hybrid_init_train, pretrain_attention, pretrain_seed, HybridResult, PretrainConfig, PretrainReport,
};
pub use reuse::{finetune_reused, finetune_reused_from_checkpoint, ReuseMode};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::attention::{compute_dataset_weights, AttentionConfig, AttentionParams, FeatureWeights};
use crate::data::{BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::learner::{objective, task_loss_with_grad, LearnerConfig, LearnerParams, Task, Targets};
use crate::nn::init::{derive_seed, tag};
use crate::nn::param::{adam_step, l2_penalty, l2_penalty_backward, AdamConfig, ParamTensor, Parameters};
use crate::nn::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub attention: AttentionConfig,
    pub learner: LearnerConfig,
    pub log_every: usize,
    /// Batch size used when streaming the dataset for the final weights.
    pub weights_batch_size: usize,
}

impl TrainConfig {
    /// Default settings for a classification dataset: 3000 steps of batch
    /// 100, `λ = 1e-4`, one 500-unit rectifier hidden layer in the learner.
    pub fn for_dataset(dataset: &Dataset) -> Self {
        let d = dataset.feature_count();
        TrainConfig {
            steps: 3000,
            batch_size: 100,
            lambda: 1e-4,
            seed: 0,
            adam: AdamConfig::default(),
            attention: AttentionConfig::default().with_input_dim(d),
            learner: LearnerConfig::classifier(d, 500, dataset.class_count().max(1)),
            log_every: 50,
            weights_batch_size: 500,
        }
    }

    pub fn validate_for(&self, dataset: &Dataset) -> Result<()> {
        self.adam.validate()?;
        self.attention.validate()?;
        self.learner.validate()?;
        if self.batch_size == 0 {
            return Err(Error::contract("batch_size must be at least 1"));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::contract("lambda must be non-negative"));
        }
        let d = dataset.feature_count();
        if self.attention.input_dim != d || self.learner.input_dim() != d {
            return Err(Error::Dimension {
                op: "train config vs dataset",
                left: (self.attention.input_dim, self.learner.input_dim()),
                right: (dataset.len(), d),
            });
        }
        match (self.learner.task, dataset.targets()) {
            (Task::Classification, Targets::Classes(_)) => {
                if self.learner.output_dim() < dataset.class_count() {
                    return Err(Error::contract(format!(
                        "learner has {} outputs for {} classes",
                        self.learner.output_dim(),
                        dataset.class_count()
                    )));
                }
            }
            (Task::Regression, Targets::Values(v)) => {
                if v.cols() != self.learner.output_dim() {
                    return Err(Error::contract("regression target width differs from learner output"));
                }
            }
            (task, _) => return Err(Error::contract(format!("dataset targets do not match a {task:?} learner"))),
        }
        Ok(())
    }

    pub(crate) fn attention_seed(&self) -> u64 {
        derive_seed(self.seed, tag("attention"))
    }

    pub(crate) fn learner_seed(&self) -> u64 {
        derive_seed(self.seed, tag("learner"))
    }

    pub(crate) fn batch_seed(&self) -> u64 {
        derive_seed(self.seed, tag("batches"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoggedStep {
    pub step: usize,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<LoggedStep>,
    pub weights: FeatureWeights,
    pub wall_time: Duration,
}

impl TrainReport {
    /// `step,objective` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,objective\n");
        for s in &self.history {
            out.push_str(&format!("{},{}\n", s.step, s.objective));
        }
        out
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug)]
pub struct AfsResult {
    pub attention: AttentionParams,
    pub learner: LearnerParams,
    pub report: TrainReport,
}

impl AfsResult {
    pub fn weights(&self) -> &FeatureWeights {
        &self.report.weights
    }
}

/// The joint objective on one batch, without touching gradients.
pub fn joint_objective(
    attention: &AttentionParams,
    learner: &LearnerParams,
    x: &Matrix,
    y: &Targets,
    lambda: f64,
) -> Result<f64> {
    let a = attention.forward(x)?;
    let g = x.hadamard(a.attention())?;
    let out = learner.forward(&g)?;
    objective(
        learner.config().task,
        out.output(),
        y,
        attention.params().into_iter().chain(learner.params()),
        lambda,
    )
}

/// Gradients of the joint objective for one batch; returns the objective.
///
/// The attention gradient flows through `G = X ⊙ A`, so `∂L/∂A = ∂L/∂G ⊙ X`.
pub fn joint_gradients(
    attention: &mut AttentionParams,
    learner: &mut LearnerParams,
    x: &Matrix,
    y: &Targets,
    lambda: f64,
) -> Result<f64> {
    let a_cache = attention.forward(x)?;
    let g = x.hadamard(a_cache.attention())?;
    let l_cache = learner.forward(&g)?;
    let (loss, grad_out) = task_loss_with_grad(learner.config().task, l_cache.output(), y)?;
    let penalty = l2_penalty(attention.params().into_iter().chain(learner.params()), lambda);

    let grad_g = learner
        .backward(&g, &l_cache, &grad_out, true)?
        .expect("input gradient requested");
    let grad_a = grad_g.hadamard(x)?;
    attention.backward(x, &a_cache, &grad_a)?;
    l2_penalty_backward(attention.params_mut().into_iter().chain(learner.params_mut()), lambda);
    Ok(loss + penalty)
}

fn all_params<'a>(attention: &'a mut AttentionParams, learner: &'a mut LearnerParams) -> impl Iterator<Item = &'a mut ParamTensor> {
    attention.params_mut().into_iter().chain(learner.params_mut())
}

/// Runs `config.steps` joint Adam steps starting from the given parameters.
pub(crate) fn run_joint(
    dataset: &Dataset,
    config: &TrainConfig,
    attention: &mut AttentionParams,
    learner: &mut LearnerParams,
) -> Result<Vec<LoggedStep>> {
    let mut history = Vec::new();
    if config.steps == 0 {
        return Ok(history);
    }
    let mut batches = BatchStream::new(dataset.len(), config.batch_size, config.batch_seed())?;
    let log_every = config.log_every.max(1);
    for step in 1..=config.steps {
        let idx = batches.next().expect("batch stream is endless");
        let x = dataset.features().select_rows(&idx);
        let y = dataset.targets().select(&idx);
        let objective = joint_gradients(attention, learner, &x, &y, config.lambda)?;
        if !objective.is_finite() {
            return Err(Error::contract(format!("objective became {objective} at step {step}")));
        }
        adam_step(all_params(attention, learner), &config.adam, step as u64)?;
        if step % log_every == 0 || step == config.steps {
            history.push(LoggedStep { step, objective });
        }
    }
    Ok(history)
}

/// Trains attention and learner jointly from a fresh seeded initialisation
/// and returns the feature weights over the whole training set.
pub fn train_afs(dataset: &Dataset, config: &TrainConfig) -> Result<AfsResult> {
    config.validate_for(dataset)?;
    let attention = AttentionParams::init(config.attention, config.attention_seed())?;
    let learner = LearnerParams::init(config.learner.clone(), config.learner_seed())?;
    train_afs_from(dataset, config, attention, learner)
}

/// Like [`train_afs`] but continues from caller-supplied parameters. Adam
/// moment buffers are reset first.
pub fn train_afs_from(
    dataset: &Dataset,
    config: &TrainConfig,
    mut attention: AttentionParams,
    mut learner: LearnerParams,
) -> Result<AfsResult> {
    config.validate_for(dataset)?;
    if attention.config() != &config.attention {
        return Err(Error::contract("attention parameters do not match the configuration"));
    }
    if learner.config() != &config.learner {
        return Err(Error::contract("learner parameters do not match the configuration"));
    }
    let start = Instant::now();
    for p in all_params(&mut attention, &mut learner) {
        p.reset_moments();
        p.zero_grad();
    }
    let history = run_joint(dataset, config, &mut attention, &mut learner)?;
    let weights = compute_dataset_weights(dataset.features(), &attention, config.weights_batch_size.max(1))?;
    Ok(AfsResult {
        attention,
        learner,
        report: TrainReport {
            history,
            weights,
            wall_time: start.elapsed(),
        },
    })
}
