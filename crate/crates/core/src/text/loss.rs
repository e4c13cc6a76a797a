use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::LabelBatch;

/// `(1 − ε)·onehot + ε / V` for every label position.
pub fn smoothed_targets<T: Element>(labels: &LabelBatch, classes: usize, smoothing: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&smoothing) {
        return Err(Error::Config(format!("label smoothing {smoothing} outside [0, 1]")));
    }
    let hot = labels.one_hot::<f64>(classes)?;
    let floor = smoothing / classes as f64;
    let values: Vec<f64> = hot.data().iter().map(|&h| (1.0 - smoothing) * h + floor).collect();
    Tensor::from_f64(hot.shape(), &values)
}

/// Cross-entropy of `N × k × V` logits against smoothed targets, averaged over
/// the batch and all `k` positions (end-token padding included).
pub fn ce_loss<T: Element>(g: &mut Graph<T>, logits: Var, labels: &LabelBatch, smoothing: f64) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    let [n, k, v] = shape[..] else {
        return Err(Error::shape("ce_loss", format!("expected N×k×V logits, got {shape:?}")));
    };
    if labels.len() != n || labels.positions() != k {
        return Err(Error::shape(
            "ce_loss",
            format!("logits {shape:?} vs {} labels of {} positions", labels.len(), labels.positions()),
        ));
    }
    let targets = g.constant(smoothed_targets(labels, v, smoothing)?);
    let log_probs = g.log_softmax(logits, 2)?;
    let weighted = g.mul(log_probs, targets)?;
    let total = g.sum_all(weighted)?;
    Ok(g.scale(total, -T::one() / T::from_usize(n * k)))
}
