//! Mini-batch training with Adam and best-validation model selection.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Prepared};
use crate::factor_graph::AugmentedFactorGraph;
use crate::gnn::{adam_step, save_checkpoint, variable_labels, AdamState, GnnModel, GraphBatch};
use crate::grid::PowerSystem;

/// Encoded graphs and labels of the given samples.
pub fn prepare(sys: &PowerSystem, samples: &[Sample], n_max: usize) -> Result<Vec<Prepared>> {
    samples
        .iter()
        .map(|s| {
            let graph = s.graph(sys, n_max)?;
            let labels = variable_labels(&graph, &s.label);
            Ok(Prepared { graph, labels })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Where the best-validation model is written, if anywhere.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss over each epoch's batches.
    pub train_loss: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub best_checkpoint: Option<PathBuf>,
    pub steps: u64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mse,seconds\n");
        for e in 0..self.train_loss.len() {
            out.push_str(&format!(
                "{},{:e},{:e},{:.3}\n",
                e + 1,
                self.train_loss[e],
                self.val_mse.get(e).copied().unwrap_or(f64::NAN),
                self.epoch_seconds[e]
            ));
        }
        out
    }
}

fn batch_of<'a>(data: &'a [Prepared], idx: &[usize]) -> Result<(GraphBatch, Vec<f64>)> {
    let graphs: Vec<&'a AugmentedFactorGraph> = idx.iter().map(|&i| &data[i].graph).collect();
    let labels = idx.iter().flat_map(|&i| data[i].labels.iter().copied()).collect();
    Ok((GraphBatch::new(&graphs)?, labels))
}

/// Trains for `opts.epochs` epochs over shuffled mini-batches. The model
/// with the lowest end-of-epoch validation MSE (training-set MSE when there
/// is no validation data) is returned and, if requested, checkpointed.
pub fn train(mut model: GnnModel, train_set: &[Prepared], val_set: &[Prepared], opts: &TrainOptions) -> Result<(GnnModel, TrainReport)> {
    if train_set.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if opts.batch_size == 0 || opts.epochs == 0 {
        return Err(Error::Training("batch size and epochs must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = AdamState::new(model.parameter_count());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        train_loss: Vec::with_capacity(opts.epochs),
        val_mse: Vec::with_capacity(opts.epochs),
        epoch_seconds: Vec::with_capacity(opts.epochs),
        best_epoch: 0,
        best_val_mse: f64::INFINITY,
        best_checkpoint: None,
        steps: 0,
    };
    let mut best = model.params.clone();
    let n_buses = train_set[0].graph.bus_adjacency.len();
    for epoch in 0..opts.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut weight) = (0.0, 0usize);
        for (step, chunk) in order.chunks(opts.batch_size).enumerate() {
            let (batch, labels) = batch_of(train_set, chunk)?;
            let (loss, grad) = model.loss_and_grad(&batch, &labels)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite loss {loss} at epoch {} step {step} (batch of {} graphs)",
                    epoch + 1,
                    chunk.len()
                )));
            }
            adam_step(&mut model, &mut adam, &grad, opts.learning_rate)?;
            loss_sum += loss * labels.len() as f64;
            weight += labels.len();
            report.steps += 1;
        }
        let train_loss = loss_sum / weight.max(1) as f64;
        let scored = if val_set.is_empty() { train_set } else { val_set };
        let score = evaluate(&model, scored, n_buses, "validation", None)?.mse;
        report.train_loss.push(train_loss);
        report.val_mse.push(score);
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
        log::info!("epoch {:>4}  train {train_loss:.4e}  val {score:.4e}", epoch + 1);
        if score < report.best_val_mse {
            report.best_val_mse = score;
            report.best_epoch = epoch + 1;
            best.copy_from_slice(&model.params);
        }
    }
    model.params = best;
    if let Some(path) = &opts.checkpoint {
        save_checkpoint(&model, path)?;
        report.best_checkpoint = Some(path.clone());
    }
    Ok((model, report))
}
