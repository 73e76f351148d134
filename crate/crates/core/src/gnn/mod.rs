//! Attention-based message passing GNN over augmented factor graphs,
//! written against plain dense arrays with hand-derived gradients.

mod batch;
mod checkpoint;
mod config;
mod model;
mod optim;

pub use batch::{variable_labels, Edges, GraphBatch, Incoming};
pub use checkpoint::{checkpoint_hash, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::GnnConfig;
pub use model::{init_model, ForwardCache, GnnModel, TensorInfo, LEAKY_SLOPE};
pub use optim::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::error::{Error, Result};

/// Mean of squared errors over all variable nodes of a batch.
pub fn mse_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Training(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok(sum / predictions.len() as f64)
}

/// `leaky_relu(a_srcᵀ h_src + a_dstᵀ h_dst)` with `a = [a_src; a_dst]`.
pub fn attention_logit(a: &[f64], h_src: &[f64], h_dst: &[f64]) -> f64 {
    let s = h_src.len();
    let t: f64 = a[..s].iter().zip(h_src).map(|(x, y)| x * y).sum::<f64>()
        + a[s..].iter().zip(h_dst).map(|(x, y)| x * y).sum::<f64>();
    if t > 0.0 {
        t
    } else {
        LEAKY_SLOPE * t
    }
}

/// Softmax of `logits` applied as convex weights to `messages`.
pub fn attention_aggregate(messages: &[Vec<f64>], logits: &[f64]) -> Result<Vec<f64>> {
    if messages.is_empty() || messages.len() != logits.len() {
        return Err(Error::Training("attention needs one logit per message and at least one message".into()));
    }
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let sum: f64 = w.iter().sum();
    let mut out = vec![0.0; messages[0].len()];
    for (m, wi) in messages.iter().zip(&w) {
        for (o, x) in out.iter_mut().zip(m) {
            *o += wi / sum * x;
        }
    }
    Ok(out)
}
