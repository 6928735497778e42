use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::matrix::Matrix;

/// Weight matrices are L2-penalised, biases are not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// A named trainable tensor with its gradient and Adam moment buffers.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    name: String,
    kind: ParamKind,
    pub(crate) value: Matrix,
    pub(crate) grad: Matrix,
    adam_m: Matrix,
    adam_v: Matrix,
    pub trainable: bool,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, kind: ParamKind, value: Matrix) -> Self {
        let (r, c) = value.shape();
        ParamTensor {
            name: name.into(),
            kind,
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            trainable: true,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    /// Mutable access to the entries; the shape is fixed.
    pub fn value_mut(&mut self) -> &mut [f64] {
        self.value.as_mut_slice()
    }

    pub fn set_value(&mut self, value: Matrix) -> Result<()> {
        if value.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                name: self.name.clone(),
                expected: self.shape(),
                found: value.shape(),
            });
        }
        self.value = value;
        Ok(())
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        self.grad.as_mut_slice()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Clears both Adam moment buffers.
    pub fn reset_moments(&mut self) {
        self.adam_m.fill(0.0);
        self.adam_v.fill(0.0);
    }

    pub fn moments(&self) -> (&Matrix, &Matrix) {
        (&self.adam_m, &self.adam_v)
    }
}

/// Anything that owns a fixed, ordered set of parameter tensors.
pub trait Parameters {
    fn params(&self) -> Vec<&ParamTensor>;
    fn params_mut(&mut self) -> Vec<&mut ParamTensor>;

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid Adam configuration {self:?}")))
        }
    }
}

/// `lambda * Σ w²` over trainable weight tensors (biases excluded).
pub fn l2_penalty<'a>(params: impl IntoIterator<Item = &'a ParamTensor>, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda
        * params
            .into_iter()
            .filter(|p| p.trainable && p.kind == ParamKind::Weight)
            .map(|p| p.value.sum_of_squares())
            .sum::<f64>()
}

/// Accumulates the gradient of [`l2_penalty`], `2 * lambda * w`.
pub fn l2_penalty_backward<'a>(params: impl IntoIterator<Item = &'a mut ParamTensor>, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for p in params {
        if p.trainable && p.kind == ParamKind::Weight {
            for (g, w) in p.grad.as_mut_slice().iter_mut().zip(p.value.as_slice()) {
                *g += 2.0 * lambda * w;
            }
        }
    }
}

/// One bias-corrected Adam update on every trainable tensor, then clears
/// all gradients. `step_index` counts from 1.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = &'a mut ParamTensor>,
    config: &AdamConfig,
    step_index: u64,
) -> Result<()> {
    if step_index == 0 {
        return Err(Error::contract("Adam step index starts at 1"));
    }
    let t = step_index.min(i32::MAX as u64) as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let (b1, b2, lr, eps) = (config.beta1, config.beta2, config.learning_rate, config.epsilon);
    for p in params {
        if p.trainable {
            let values = p.value.as_mut_slice().iter_mut();
            let moments = p.adam_m.as_mut_slice().iter_mut().zip(p.adam_v.as_mut_slice());
            for ((w, (m, v)), &g) in values.zip(moments).zip(p.grad.as_slice()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(name: &str, v: f64) -> ParamTensor {
        ParamTensor::new(name, ParamKind::Weight, Matrix::row_vector(&[v]))
    }

    #[test]
    fn l2_penalty_examples() {
        let zero = ParamTensor::new("w", ParamKind::Weight, Matrix::zeros(3, 2));
        assert_eq!(l2_penalty([&zero], 0.5), 0.0);

        let w = ParamTensor::new("w", ParamKind::Weight, Matrix::row_vector(&[1.0, 2.0]));
        assert!((l2_penalty([&w], 0.0001) - 0.0005).abs() < 1e-18);
        assert_eq!(l2_penalty([&w], 0.0), 0.0);

        let b = ParamTensor::new("b", ParamKind::Bias, Matrix::row_vector(&[10.0]));
        assert!((l2_penalty([&w, &b], 1.0) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn squared_weight_has_gradient_six_at_three() {
        let mut w = scalar("w", 3.0);
        l2_penalty_backward([&mut w], 1.0);
        assert_eq!(w.grad().as_slice(), &[6.0]);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut w = scalar("w", 0.25);
        adam_step([&mut w], &AdamConfig::default(), 1).unwrap();
        assert_eq!(w.value().as_slice(), &[0.25]);
    }

    #[test]
    fn adam_rejects_step_zero() {
        let mut w = scalar("w", 1.0);
        assert!(matches!(
            adam_step([&mut w], &AdamConfig::default(), 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.02, 1e-3] {
            let mut w = scalar("w", 1.0);
            w.grad_mut()[0] = g;
            adam_step([&mut w], &cfg, 1).unwrap();
            // m̂ = g, v̂ = g², update = lr·g/(|g| + eps)
            let expected = 1.0 - cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert!((w.value()[(0, 0)] - expected).abs() < 1e-15);
            assert!(((1.0 - w.value()[(0, 0)]).abs() - cfg.learning_rate).abs() < 1e-7);
            assert_eq!(w.grad()[(0, 0)], 0.0, "gradients are cleared");
        }
    }

    #[test]
    fn adam_two_steps_follow_recurrence() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            beta1: 0.5,
            beta2: 0.75,
            epsilon: 1e-8,
        };
        let g = 2.0;
        let mut w = scalar("w", 0.0);
        for t in 1..=2 {
            w.grad_mut()[0] = g;
            adam_step([&mut w], &cfg, t).unwrap();
        }
        // Step 1: m=1, v=1, m̂=2, v̂=4 -> Δ=0.1·2/(2+eps)
        // Step 2: m=1.5, v=1.75, m̂=1.5/0.75=2, v̂=1.75/0.4375=4 -> same Δ
        let step = 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((w.value()[(0, 0)] + 2.0 * step).abs() < 1e-15);
        let (m, v) = w.moments();
        assert_eq!((m[(0, 0)], v[(0, 0)]), (1.5, 1.75));
    }

    #[test]
    fn adam_skips_frozen_tensors() {
        let mut w = scalar("w", 0.5);
        w.trainable = false;
        w.grad_mut()[0] = 10.0;
        adam_step([&mut w], &AdamConfig::default(), 1).unwrap();
        assert_eq!(w.value().as_slice(), &[0.5]);
        assert_eq!(w.grad().as_slice(), &[0.0]);
    }

    #[test]
    fn set_value_checks_shape() {
        let mut w = scalar("layer.w", 0.0);
        let err = w.set_value(Matrix::zeros(2, 2)).unwrap_err();
        assert!(err.to_string().contains("layer.w"));
    }
}
