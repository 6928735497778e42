//! Forward operations and losses for the dense networks.
//!
//! Every loss comes in two flavours: a plain value (`*_loss`) and a
//! `*_with_grad` variant that also returns the gradient of the loss with
//! respect to its first argument. The gradient variants are what the
//! training loops call.

use crate::error::{Error, Result};
use crate::nn::matrix::{matmul, Matrix};

/// `input · weights + bias`, broadcasting `bias` over rows.
pub fn dense_forward(input: &Matrix, weights: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if input.cols() != weights.rows() {
        return Err(Error::Dimension {
            op: "dense_forward",
            left: input.shape(),
            right: weights.shape(),
        });
    }
    let mut out = matmul(input, weights)?;
    out.add_row_inplace(bias)?;
    Ok(out)
}

pub fn tanh_forward(x: &Matrix) -> Matrix {
    x.map(f64::tanh)
}

pub fn relu_forward(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Probability of the first of two logits, `exp(p) / (exp(p) + exp(n))`.
///
/// The larger logit is subtracted before exponentiating, so the result is
/// finite for any finite inputs.
#[inline]
pub fn two_logit_softmax(p: f64, n: f64) -> f64 {
    let top = p.max(n);
    let ep = (p - top).exp();
    let en = (n - top).exp();
    ep / (ep + en)
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::Dimension {
            op: "cross_entropy_loss",
            left: logits.shape(),
            right: (labels.len(), 1),
        });
    }
    if logits.rows() == 0 {
        return Err(Error::contract("cross entropy over an empty batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= logits.cols()) {
        return Err(Error::Index {
            what: "class label",
            index: bad,
            len: logits.cols(),
        });
    }
    Ok(())
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + row.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.row(i);
            log_sum_exp(row) - row[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Cross entropy and its gradient with respect to the logits,
/// `(softmax(logits) - onehot(labels)) / m`.
pub fn cross_entropy_with_grad(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_labels(logits, labels)?;
    let m = labels.len() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        total += lse - row[y];
        let g = grad.row_mut(i);
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = (z - lse).exp() / m;
        }
        g[y] -= 1.0 / m;
    }
    Ok((total / m, grad))
}

/// Mean of squared elementwise differences.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    pred.check_same_shape(target, "mse_loss")?;
    if pred.is_empty() {
        return Err(Error::contract("mse over an empty matrix"));
    }
    let sum: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn mse_with_grad(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    let loss = mse_loss(pred, target)?;
    let scale = 2.0 / pred.len() as f64;
    let data = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| scale * (p - t))
        .collect();
    Ok((loss, Matrix::from_vec(pred.rows(), pred.cols(), data)?))
}
