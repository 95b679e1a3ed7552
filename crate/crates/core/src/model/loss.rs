//! Softmax cross-entropy and the weighted multi-task loss over the three
//! attribute heads.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ModelError;

/// Per-head weights of the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub conv: f64,
    pub spk: f64,
    pub wg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { conv: 1.0, spk: 1.0, wg: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ModelError> {
        let vals = [self.conv, self.spk, self.wg];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ModelError::BadConfig("loss weights must be finite and non-negative".into()));
        }
        if vals.iter().all(|v| *v == 0.0) {
            return Err(ModelError::BadConfig("loss weights must not all be zero".into()));
        }
        Ok(())
    }
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_labels(logits: &Array2<f64>, labels: &[usize]) -> Result<(), ModelError> {
    if logits.nrows() != labels.len() {
        return Err(ModelError::BadLabels(format!(
            "{} logit rows vs {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let classes = logits.ncols();
    if let Some(bad) = labels.iter().find(|l| **l >= classes) {
        return Err(ModelError::BadLabels(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Batch-mean cross-entropy of softmax(logits) at the true classes.
pub fn cross_entropy_mean(logits: &Array2<f64>, labels: &[usize]) -> Result<f64, ModelError> {
    check_labels(logits, labels)?;
    let mut total = 0.0;
    for (row, &label) in logits.outer_iter().zip(labels) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum: f64 = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += log_sum - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of `scale * cross_entropy_mean` w.r.t. the logits:
/// `scale/B * (softmax - onehot)`.
pub fn cross_entropy_grad(
    logits: &Array2<f64>,
    labels: &[usize],
    scale: f64,
) -> Result<Array2<f64>, ModelError> {
    check_labels(logits, labels)?;
    let batch = labels.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, (row, &label)) in logits.outer_iter().zip(labels).enumerate() {
        let probs = softmax(row.as_slice().expect("contiguous row"));
        for (j, p) in probs.iter().enumerate() {
            let indicator = if j == label { 1.0 } else { 0.0 };
            grad[(i, j)] = scale * (p - indicator) / batch;
        }
    }
    Ok(grad)
}

/// Weighted multi-task loss over per-head logits and labels:
/// `w_conv * CE_conv + w_spk * CE_spk + w_wg * CE_wg`, each term batch-mean.
pub fn multitask_loss(
    conv_logits: &Array2<f64>,
    spk_logits: &Array2<f64>,
    wg_logits: &Array2<f64>,
    conv_labels: &[usize],
    spk_labels: &[usize],
    wg_labels: &[usize],
    weights: &LossWeights,
) -> Result<f64, ModelError> {
    weights.validate()?;
    Ok(weights.conv * cross_entropy_mean(conv_logits, conv_labels)?
        + weights.spk * cross_entropy_mean(spk_logits, spk_labels)?
        + weights.wg * cross_entropy_mean(wg_logits, wg_labels)?)
}
