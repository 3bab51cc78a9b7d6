//! Minibatch training: per-sample graphs built in parallel, gradients
//! averaged in sample order (bit-stable regardless of thread count), ADAM
//! updates, and evaluation helpers.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::tensor::{AdamState, Graph};

use super::{Model, TaskKind};

/// Hyper-parameters of one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Seed of the shuffle / dropout stream (independent of weight init).
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { lr: 1e-3, batch_size: 16, epochs: 60, seed: 0 }
    }
}

/// What one epoch measured on the clouds it trained on.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    /// 1-based index of the finished epoch.
    pub epoch: usize,
    /// Mean per-sample loss.
    pub mean_loss: f64,
    /// Accuracy of the training-pass predictions (per point for
    /// segmentation).
    pub accuracy: f64,
}

/// One sample's contribution: slot-ordered gradients plus bookkeeping.
struct SampleResult {
    grads: Vec<Option<Vec<f32>>>,
    loss: f64,
    correct: usize,
    total: usize,
}

/// Owns a model and optimizer state and advances them epoch by epoch.
///
/// Each epoch derives its shuffle / dropout-seed stream from the run seed and
/// the epoch index alone, so a run resumed from a checkpoint replays exactly
/// the schedule the uninterrupted run would have used.
pub struct Trainer {
    model: Model,
    adam: AdamState,
    opts: TrainOptions,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: Model, opts: TrainOptions) -> Self {
        let adam = AdamState::new(model.params());
        Trainer { model, adam, opts, epoch: 0 }
    }

    /// Restores a trainer mid-run (checkpoint path).
    pub fn from_parts(model: Model, adam: AdamState, opts: TrainOptions, epoch: usize) -> Self {
        Trainer { model, adam, opts, epoch }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn options(&self) -> &TrainOptions {
        &self.opts
    }

    /// Number of epochs completed so far.
    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Consumes the trainer, returning the trained model.
    pub fn into_model(self) -> Model {
        self.model
    }

    /// One pass over labelled clouds (whole-cloud task).
    pub fn run_epoch(&mut self, data: &[PointCloud]) -> Result<EpochStats> {
        if self.model.config().task != TaskKind::Classify {
            return Err(Error::State("run_epoch drives the whole-cloud task".into()));
        }
        for (i, c) in data.iter().enumerate() {
            if c.label().is_none() {
                return Err(Error::param("run_epoch", format!("cloud {i} has no label")));
            }
        }
        self.drive(data.len(), |model, idx, seed| {
            let cloud = &data[idx];
            let label = cloud.label().expect("checked above");
            let mut g = Graph::with_seed(seed);
            let out = model.forward(&mut g, cloud, true)?;
            let loss = model.classify_loss(&mut g, &out, label)?;
            g.backward(loss)?;
            let pred = model.predict(&g, &out)[0];
            Ok(SampleResult {
                grads: collect_grads(&g, &out.param_vars),
                loss: g.value(loss).data()[0] as f64,
                correct: (pred == label) as usize,
                total: 1,
            })
        })
    }

    /// One pass over clouds with per-point labels (segmentation task).
    pub fn run_epoch_segment(&mut self, data: &[(PointCloud, Vec<u32>)]) -> Result<EpochStats> {
        if self.model.config().task != TaskKind::Segment {
            return Err(Error::State("run_epoch_segment drives the per-point task".into()));
        }
        for (i, (c, l)) in data.iter().enumerate() {
            if c.len() != l.len() {
                return Err(Error::param(
                    "run_epoch_segment",
                    format!("cloud {i} has {} points but {} labels", c.len(), l.len()),
                ));
            }
        }
        self.drive(data.len(), |model, idx, seed| {
            let (cloud, labels) = &data[idx];
            let mut g = Graph::with_seed(seed);
            let out = model.forward(&mut g, cloud, true)?;
            let loss = model.segment_loss(&mut g, &out, labels)?;
            g.backward(loss)?;
            let preds = model.predict(&g, &out);
            let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
            Ok(SampleResult {
                grads: collect_grads(&g, &out.param_vars),
                loss: g.value(loss).data()[0] as f64,
                correct,
                total: labels.len(),
            })
        })
    }

    /// Shuffles, batches, runs `sample` per cloud in parallel, reduces
    /// gradients in sample order, and applies one ADAM step per batch.
    fn drive<F>(&mut self, n: usize, sample: F) -> Result<EpochStats>
    where
        F: Fn(&Model, usize, u64) -> Result<SampleResult> + Sync,
    {
        if n == 0 {
            return Err(Error::param("train", "epoch needs at least one cloud"));
        }
        // Every epoch gets its own substream of the run seed.
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed);
        rng.set_stream(self.epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut total = 0usize;
        for batch in order.chunks(self.opts.batch_size.max(1)) {
            // Seeds are drawn sequentially so the schedule is independent of
            // how rayon interleaves the samples.
            let jobs: Vec<(usize, u64)> = batch.iter().map(|&idx| (idx, rng.gen())).collect();
            let model = &self.model;
            let results: Vec<Result<SampleResult>> =
                jobs.par_iter().map(|&(idx, seed)| sample(model, idx, seed)).collect();
            let scale = 1.0 / batch.len() as f32;
            let params = self.model.params_mut();
            for r in results {
                let r = r?;
                if !r.loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss became {} during epoch {}",
                        r.loss,
                        self.epoch + 1
                    )));
                }
                for (slot, grad) in r.grads.iter().enumerate() {
                    if let Some(grad) = grad {
                        params.accumulate_grad(slot, grad, scale)?;
                    }
                }
                loss_sum += r.loss;
                correct += r.correct;
                total += r.total;
            }
            // A slot misses its gradient only if no sample touched it; give
            // it an explicit zero so the optimizer contract holds.
            for slot in 0..params.len() {
                if params.get(slot).grad.is_none() {
                    let zeros = vec![0.0; params.get(slot).value.len()];
                    params.accumulate_grad(slot, &zeros, 0.0)?;
                }
            }
            self.adam.step(params, self.opts.lr)?;
        }
        self.epoch += 1;
        Ok(EpochStats {
            epoch: self.epoch,
            mean_loss: loss_sum / n as f64,
            accuracy: correct as f64 / total.max(1) as f64,
        })
    }
}

fn collect_grads(g: &Graph, param_vars: &[crate::tensor::Var]) -> Vec<Option<Vec<f32>>> {
    param_vars.iter().map(|&v| g.grad(v).map(|s| s.to_vec())).collect()
}

/// Mean accuracy of deterministic evaluation passes over labelled clouds.
pub fn evaluate_classifier(model: &Model, data: &[PointCloud]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::param("evaluate", "need at least one cloud"));
    }
    let correct: Result<Vec<usize>> = data
        .par_iter()
        .enumerate()
        .map(|(i, cloud)| {
            let label = cloud
                .label()
                .ok_or_else(|| Error::param("evaluate", format!("cloud {i} has no label")))?;
            let mut g = Graph::with_seed(0);
            let out = model.forward(&mut g, cloud, false)?;
            Ok((model.predict(&g, &out)[0] == label) as usize)
        })
        .collect();
    Ok(correct?.iter().sum::<usize>() as f64 / data.len() as f64)
}

/// Mean per-point accuracy over clouds with per-point labels.
pub fn evaluate_segmenter(model: &Model, data: &[(PointCloud, Vec<u32>)]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::param("evaluate", "need at least one cloud"));
    }
    let counts: Result<Vec<(usize, usize)>> = data
        .par_iter()
        .map(|(cloud, labels)| {
            let mut g = Graph::with_seed(0);
            let out = model.forward(&mut g, cloud, false)?;
            let preds = model.predict(&g, &out);
            let hit = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
            Ok((hit, labels.len()))
        })
        .collect();
    let (hit, total) = counts?
        .iter()
        .fold((0, 0), |(h, t), &(ch, ct)| (h + ch, t + ct));
    Ok(hit as f64 / total.max(1) as f64)
}

// ── tests ─────────────────────────────────────────────────────────────────
