//! Binary cross-entropy for both heads and their weighted combination.

use ndarray::{Array, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

fn clamp(p: f64) -> f64 {
    p.clamp(EPS, 1.0 - EPS)
}

/// Mean binary cross-entropy between probabilities and binary targets.
pub fn bce<D: Dimension>(prob: &Array<f64, D>, target: &Array<f64, D>) -> Result<f64> {
    if prob.shape() != target.shape() {
        return Err(Error::Shape(format!(
            "bce: prediction {:?} vs target {:?}",
            prob.shape(),
            target.shape()
        )));
    }
    if prob.is_empty() {
        return Err(Error::Shape("bce of an empty array".into()));
    }
    let sum = Zip::from(prob).and(target).fold(0.0, |acc, &p, &y| {
        let p = clamp(p);
        acc - (y * p.ln() + (1.0 - y) * (1.0 - p).ln())
    });
    Ok(sum / prob.len() as f64)
}

/// Gradient of [`bce`] with respect to the probabilities. Zero where clamping
/// is active.
pub fn bce_grad<D: Dimension>(prob: &Array<f64, D>, target: &Array<f64, D>) -> Array<f64, D> {
    let n = prob.len() as f64;
    Zip::from(prob).and(target).map_collect(|&p, &y| {
        if p <= EPS || p >= 1.0 - EPS {
            0.0
        } else {
            (p - y) / (p * (1.0 - p)) / n
        }
    })
}

/// Gradient of `bce(sigmoid(z), y)` with respect to the logits `z`, given
/// `p = sigmoid(z)`.
pub fn bce_logit_grad<D: Dimension>(prob: &Array<f64, D>, target: &Array<f64, D>) -> Array<f64, D> {
    let n = prob.len() as f64;
    Zip::from(prob).and(target).map_collect(|&p, &y| {
        if p <= EPS || p >= 1.0 - EPS {
            0.0
        } else {
            (p - y) / n
        }
    })
}

/// Scalar counterpart of [`bce`].
pub fn bce_scalar(p: f64, y: f64) -> f64 {
    let p = clamp(p);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Scalar counterpart of [`bce_logit_grad`].
pub fn bce_scalar_logit_grad(p: f64, y: f64) -> f64 {
    if p <= EPS || p >= 1.0 - EPS {
        0.0
    } else {
        p - y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub seg_loss: f64,
    pub class_loss: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(seg_loss: f64, class_loss: f64, lambda: f64) -> Result<Self> {
        check_lambda(lambda)?;
        Ok(Self {
            seg_loss,
            class_loss,
            total: lambda * seg_loss + (1.0 - lambda) * class_loss,
            lambda,
        })
    }

    /// Averages breakdowns that share one `lambda`.
    pub fn mean(items: &[LossBreakdown], lambda: f64) -> Result<Self> {
        if items.is_empty() {
            return Self::new(0.0, 0.0, lambda);
        }
        let n = items.len() as f64;
        let seg = items.iter().map(|b| b.seg_loss).sum::<f64>() / n;
        let class = items.iter().map(|b| b.class_loss).sum::<f64>() / n;
        Self::new(seg, class, lambda)
    }
}

pub fn check_lambda(lambda: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lambda) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("lambda {lambda} outside [0, 1]")))
    }
}

/// `L = lambda * L_S + (1 - lambda) * L_C`, both binary cross-entropy.
pub fn joint_loss<D: Dimension>(
    seg_prob: &Array<f64, D>,
    mask: &Array<f64, D>,
    class_prob: f64,
    label: f64,
    lambda: f64,
) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    LossBreakdown::new(bce(seg_prob, mask)?, bce_scalar(class_prob, label), lambda)
}

/// Gradients of [`joint_loss`]'s total with respect to `seg_prob` and `class_prob`.
pub fn joint_loss_grad<D: Dimension>(
    seg_prob: &Array<f64, D>,
    mask: &Array<f64, D>,
    class_prob: f64,
    label: f64,
    lambda: f64,
) -> (Array<f64, D>, f64) {
    let dseg = bce_grad(seg_prob, mask) * lambda;
    let p = class_prob;
    let dclass = if p <= EPS || p >= 1.0 - EPS {
        0.0
    } else {
        (1.0 - lambda) * (p - label) / (p * (1.0 - p))
    };
    (dseg, dclass)
}
