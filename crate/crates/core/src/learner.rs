//! The learning module: attention-gated inputs `G = X ⊙ A` feed a dense
//! task network whose loss, plus an L2 penalty over every trainable tensor,
//! is the training objective.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init::{rng_from_seed, truncated_normal, INIT_STDDEV};
use crate::nn::matrix::{add_matmul_tn, matmul, matmul_nt, Matrix};
use crate::nn::ops::{cross_entropy_with_grad, mse_with_grad};
use crate::nn::param::{l2_penalty, ParamKind, ParamTensor, Parameters};
use crate::trainer::read_checkpoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Input width, hidden widths..., output width.
    pub layer_sizes: Vec<usize>,
    pub task: Task,
    pub activation: Activation,
}

impl LearnerConfig {
    /// One rectifier hidden layer of `hidden` units.
    pub fn classifier(input_dim: usize, hidden: usize, classes: usize) -> Self {
        LearnerConfig {
            layer_sizes: vec![input_dim, hidden, classes],
            task: Task::Classification,
            activation: Activation::Relu,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes.first().copied().unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::contract(format!(
                "learner layer sizes {:?} need an input and an output, all non-zero",
                self.layer_sizes
            )));
        }
        Ok(())
    }
}

/// Supervision targets.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Matrix),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(indices.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(v.select_rows(indices)),
        }
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Targets::Classes(c) => Some(c),
            Targets::Values(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LearnerParams {
    config: LearnerConfig,
    pub(crate) layers: Vec<(ParamTensor, ParamTensor)>,
    frozen: bool,
}

impl LearnerParams {
    pub fn zeros(config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                (
                    ParamTensor::new(format!("learner.layer{l}.w"), ParamKind::Weight, Matrix::zeros(w[0], w[1])),
                    ParamTensor::new(format!("learner.layer{l}.b"), ParamKind::Bias, Matrix::zeros(1, w[1])),
                )
            })
            .collect();
        Ok(LearnerParams {
            config,
            layers,
            frozen: false,
        })
    }

    pub fn init(config: LearnerConfig, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        let mut rng = rng_from_seed(seed);
        for p in params.params_mut() {
            let (r, c) = p.shape();
            p.value = truncated_normal(r, c, INIT_STDDEV, &mut rng);
        }
        Ok(params)
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn layer(&self, l: usize) -> Option<(&ParamTensor, &ParamTensor)> {
        self.layers.get(l).map(|(w, b)| (w, b))
    }

    pub fn layer_mut(&mut self, l: usize) -> Option<(&mut ParamTensor, &mut ParamTensor)> {
        self.layers.get_mut(l).map(|(w, b)| (w, b))
    }
}

/// Reads the learner tensors of a checkpoint, checking each against the
/// shapes `expected` implies. Adam moments start at zero.
pub fn load_pretrained(path: &Path, expected: &LearnerConfig) -> Result<LearnerParams> {
    read_checkpoint(path)?.learner_for(expected, path)
}

/// Sets every learner tensor's trainable flag to `!frozen`.
pub fn set_frozen(params: &mut LearnerParams, frozen: bool) {
    params.frozen = frozen;
    for p in params.params_mut() {
        p.trainable = !frozen;
    }
}

impl Parameters for LearnerParams {
    fn params(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }
}

/// `G = X ⊙ A`. Takes the raw gate so that boundary gates (all ones, all
/// zeros) can be applied as well as attention outputs.
pub fn weight_features(batch: &Matrix, attention: &Matrix) -> Result<Matrix> {
    batch.hadamard(attention)
}

#[derive(Clone, Debug)]
pub struct LearnerCache {
    /// Post-activation outputs of each hidden layer.
    hidden: Vec<Matrix>,
    output: Matrix,
}

impl LearnerCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

impl LearnerParams {
    pub fn forward(&self, g: &Matrix) -> Result<LearnerCache> {
        if g.cols() != self.config.input_dim() {
            return Err(Error::Dimension {
                op: "learner_forward",
                left: g.shape(),
                right: self.layers[0].0.shape(),
            });
        }
        let last = self.layers.len() - 1;
        let mut hidden = Vec::with_capacity(last);
        let mut output = None;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let input = if l == 0 { g } else { &hidden[l - 1] };
            let mut z = matmul(input, &w.value)?;
            z.add_row_inplace(b.value.as_slice())?;
            if l == last {
                output = Some(z);
            } else {
                let act = self.config.activation;
                z.map_inplace(|v| act.apply(v));
                hidden.push(z);
            }
        }
        Ok(LearnerCache {
            hidden,
            output: output.expect("at least one layer"),
        })
    }

    /// Accumulates gradients for trainable layers given `∂L/∂output` and
    /// returns `∂L/∂G` when `need_input_grad` is set.
    pub fn backward(
        &mut self,
        g: &Matrix,
        cache: &LearnerCache,
        grad_out: &Matrix,
        need_input_grad: bool,
    ) -> Result<Option<Matrix>> {
        let act = self.config.activation;
        let mut delta = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let input = if l == 0 { g } else { &cache.hidden[l - 1] };
            let (w, b) = &mut self.layers[l];
            if w.trainable {
                add_matmul_tn(&mut w.grad, input, &delta)?;
            }
            if b.trainable {
                for (gb, s) in b.grad.as_mut_slice().iter_mut().zip(delta.column_sums()) {
                    *gb += s;
                }
            }
            if l == 0 && !need_input_grad {
                return Ok(None);
            }
            let mut prev = matmul_nt(&delta, &w.value)?;
            if l > 0 {
                for (d, &out) in prev.as_mut_slice().iter_mut().zip(cache.hidden[l - 1].as_slice()) {
                    *d *= act.derivative_from_output(out);
                }
            }
            delta = prev;
        }
        Ok(Some(delta))
    }
}

/// Logits (classification) or predictions (regression).
pub fn learner_forward(g: &Matrix, params: &LearnerParams) -> Result<Matrix> {
    Ok(params.forward(g)?.output)
}

/// Task loss and its gradient with respect to the predictions.
pub fn task_loss_with_grad(task: Task, predictions: &Matrix, targets: &Targets) -> Result<(f64, Matrix)> {
    match (task, targets) {
        (Task::Classification, Targets::Classes(labels)) => cross_entropy_with_grad(predictions, labels),
        (Task::Regression, Targets::Values(values)) => mse_with_grad(predictions, values),
        (task, _) => Err(Error::contract(format!("targets do not match a {task:?} task"))),
    }
}

/// Task loss plus `lambda · Σ w²` over all trainable weight tensors.
pub fn objective<'a>(
    task: Task,
    predictions: &Matrix,
    targets: &Targets,
    params: impl IntoIterator<Item = &'a ParamTensor>,
    lambda: f64,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::contract("lambda must be non-negative"));
    }
    let (loss, _) = task_loss_with_grad(task, predictions, targets)?;
    Ok(loss + l2_penalty(params, lambda))
}
