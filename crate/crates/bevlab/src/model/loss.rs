//! Binary cross-entropy on logits.
//!
//! Per cell with label y, logit x, and positive-class weight w:
//!   l = w * y * softplus(-x) + (1 - y) * softplus(x)
//! where softplus(t) = max(t, 0) + log(1 + exp(-|t|)) never overflows. With
//! w = 1 this is the familiar max(x, 0) - x*y + log(1 + exp(-|x|)). The loss
//! is the mean over cells; the gradient per cell is
//!   dl/dx = (w * y * (sigmoid(x) - 1) + (1 - y) * sigmoid(x)) / N
//! which reduces to (sigmoid(x) - y) / N when w = 1.

use crate::bev::BevMask;
use crate::error::{Error, Result};
use crate::model::SegmentationLogits;

/// Mean loss plus the per-cell gradient d(loss)/d(logit).
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Numerically stable log(1 + exp(t)).
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss over raw slices; labels may be soft (any value in [0, 1]).
pub fn bce_with_logits_raw(logits: &[f64], labels: &[f64], pos_weight: f64) -> Result<LossAndGrad> {
    if logits.len() != labels.len() {
        return Err(Error::invalid(format!(
            "logit count {} does not match label count {}",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::invalid("loss over an empty grid"));
    }
    if !(pos_weight.is_finite() && pos_weight > 0.0) {
        return Err(Error::invalid(format!("positive-class weight {pos_weight} must be > 0")));
    }
    if let Some(y) = labels.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(Error::invalid(format!("label {y} outside [0, 1]")));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; logits.len()];
    for (i, (&x, &y)) in logits.iter().zip(labels).enumerate() {
        loss += pos_weight * y * softplus(-x) + (1.0 - y) * softplus(x);
        let s = sigmoid(x);
        grad[i] = (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / n;
    }
    Ok(LossAndGrad { loss: loss / n, grad })
}

/// Loss of grid logits against a binary BEV mask.
pub fn bce_with_logits(
    logits: &SegmentationLogits,
    labels: &BevMask,
    pos_weight: f64,
) -> Result<LossAndGrad> {
    if logits.nx != labels.nx || logits.ny != labels.ny {
        return Err(Error::invalid(format!(
            "logit grid {}x{} does not match label grid {}x{}",
            logits.nx, logits.ny, labels.nx, labels.ny
        )));
    }
    let y: Vec<f64> = labels.data().iter().map(|&v| v as f64).collect();
    bce_with_logits_raw(&logits.data, &y, pos_weight)
}
