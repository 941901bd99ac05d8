//! Objective functions: cross-entropy as negative log-likelihood of the
//! softmax probability, mean squared error, and the penalty-augmented
//! objective `data_loss + lambda * R(w)`.

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::regularize::{self, PenaltyKind};
use crate::tensor::Tensor;

/// Floor applied to probabilities before the logarithm so a confident wrong
/// prediction yields a large finite loss instead of infinity.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// Data loss plus weight penalty configuration.
#[derive(Debug, Clone)]
pub struct Objective {
    pub loss: LossKind,
    pub penalty: PenaltyKind,
    pub lambda: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Objective {
            loss: LossKind::CrossEntropy,
            penalty: PenaltyKind::None,
            lambda: 0.0,
        }
    }
}

/// Negative log-likelihood of the labelled class: `-ln(probs[label])`.
pub fn cross_entropy(probs: &Tensor, label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    Ok(-probs.data()[label].max(PROB_FLOOR).ln())
}

/// Mean of squared differences.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Gradient of [`mse`] with respect to the predictions: `2 (pred - target) / n`.
pub fn mse_grad(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse_grad",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    let n = pred.len() as f64;
    pred.zip(target, "mse_grad", |p, t| 2.0 * (p - t) / n)
}

/// Value of the chosen data loss for softmax probabilities against a class
/// label (MSE measures against the one-hot target).
pub fn data_loss(kind: LossKind, probs: &Tensor, label: usize) -> Result<f64> {
    match kind {
        LossKind::CrossEntropy => cross_entropy(probs, label),
        LossKind::Mse => {
            let target = onehot(label, probs.len())?;
            mse(probs, &target)
        }
    }
}

/// Gradient of the chosen data loss with respect to the softmax logits.
///
/// Cross-entropy fuses with softmax to `probs - onehot(label)`. MSE routes
/// its probability gradient `u` through the softmax Jacobian,
/// `J^T u = p (*) u - (p . u) p`.
pub fn logit_grad(kind: LossKind, probs: &Tensor, label: usize) -> Result<Tensor> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: probs.len(),
        });
    }
    match kind {
        LossKind::CrossEntropy => {
            let mut g = probs.clone();
            g.data_mut()[label] -= 1.0;
            Ok(g)
        }
        LossKind::Mse => {
            let target = onehot(label, probs.len())?;
            let u = mse_grad(probs, &target)?;
            let dot: f64 = probs.data().iter().zip(u.data()).map(|(p, g)| p * g).sum();
            probs.zip(&u, "logit_grad", |p, g| p * (g - dot))
        }
    }
}

fn onehot(label: usize, classes: usize) -> Result<Tensor> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut t = Tensor::zeros(&[classes]);
    t.data_mut()[label] = 1.0;
    Ok(t)
}

/// `data_loss + lambda * R(w)` summed over the penalized parameter tensors
/// (weights only; biases carry no penalty).
pub fn regularized_objective(
    data_loss: f64,
    params: &ParamSet,
    objective: &Objective,
) -> Result<f64> {
    if objective.lambda < 0.0 {
        return Err(Error::Config(format!(
            "penalty weight must be >= 0, got {}",
            objective.lambda
        )));
    }
    if objective.lambda == 0.0 {
        return Ok(data_loss);
    }
    let mut r = 0.0;
    for p in params.iter().filter(|p| p.penalized) {
        r += regularize::penalty_value(&objective.penalty, &p.value);
    }
    Ok(data_loss + objective.lambda * r)
}
