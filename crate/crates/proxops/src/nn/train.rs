//! Seeded supervised training loop with best-on-validation checkpointing.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::adam::Adam;
use super::params::ParamStore;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("dataset split is empty: {0}")]
    EmptySplit(&'static str),
}

#[derive(Debug, Clone)]
pub struct TrainOpts {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Optional cap on batches per epoch; the shuffle decides which samples
    /// participate, so coverage rotates across epochs.
    pub max_batches_per_epoch: Option<usize>,
    /// Geometric learning-rate decay: the last epoch runs at
    /// `learning_rate * final_lr_factor`. 1.0 keeps the rate constant.
    pub final_lr_factor: f64,
    /// Decoupled (AdamW-style) weight decay.
    pub weight_decay: f64,
}

impl Default for TrainOpts {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            max_batches_per_epoch: None,
            final_lr_factor: 1.0,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean training loss per epoch (over the samples actually visited).
    pub train_loss: Vec<f64>,
    /// Mean validation loss per epoch.
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Tracks the minimum-validation-loss snapshot across epochs; ties keep the
/// earlier epoch.
#[derive(Debug, Clone, Default)]
pub struct BestTracker {
    best: Option<(usize, f64, Vec<f64>)>,
}

impl BestTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64, params: &ParamStore) {
        let better = match &self.best {
            None => true,
            Some((_, best, _)) => val_loss < *best,
        };
        if better {
            self.best = Some((epoch, val_loss, params.snapshot()));
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|(e, _, _)| *e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, l, _)| *l)
    }

    pub fn restore_into(&self, params: &mut ParamStore) -> bool {
        if let Some((_, _, snap)) = &self.best {
            params.restore(snap);
            true
        } else {
            false
        }
    }
}

/// A model trainable by [`train`]: forward/backward over its own sample
/// type, parameters in a flat [`ParamStore`].
pub trait TrainableModel {
    type Sample;

    /// Forward + backward on one sample, accumulating parameter gradients.
    /// Returns the sample loss.
    fn backward_sample(&mut self, sample: &Self::Sample) -> f64;

    /// Forward only; no gradient side effects.
    fn eval_sample(&self, sample: &Self::Sample) -> f64;

    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
}

/// Mini-batch training, deterministic for a fixed seed: fixed shuffle order,
/// single-threaded reductions. Returns the report; the model is left holding
/// the minimum-validation-loss parameters, not the final epoch's.
pub fn train<M: TrainableModel>(
    model: &mut M,
    train_set: &[M::Sample],
    val_set: &[M::Sample],
    opts: &TrainOpts,
) -> Result<TrainReport, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut adam = Adam::new(opts.learning_rate, model.store().len());
    adam.weight_decay = opts.weight_decay;
    let mut tracker = BestTracker::new();
    let mut report = TrainReport {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..opts.epochs {
        if opts.epochs > 1 && opts.final_lr_factor != 1.0 {
            let frac = epoch as f64 / (opts.epochs - 1) as f64;
            adam.lr = opts.learning_rate * opts.final_lr_factor.powf(frac);
        }
        order.shuffle(&mut rng);
        let batches = order.chunks(opts.batch_size.max(1));
        let limit = opts.max_batches_per_epoch.unwrap_or(usize::MAX);

        let mut loss_sum = 0.0;
        let mut n_seen = 0usize;
        for batch in batches.take(limit) {
            model.store_mut().zero_grads();
            for &i in batch {
                loss_sum += model.backward_sample(&train_set[i]);
                n_seen += 1;
            }
            let scale = 1.0 / batch.len() as f64;
            model.store_mut().scale_grads(scale);
            adam.step(model.store_mut());
        }
        let train_loss = loss_sum / n_seen.max(1) as f64;

        let val_loss =
            val_set.iter().map(|s| model.eval_sample(s)).sum::<f64>() / val_set.len() as f64;

        if !train_loss.is_finite() || !val_loss.is_finite() || !model.store().all_finite() {
            return Err(TrainError::Divergence {
                epoch,
                loss: train_loss,
            });
        }

        report.train_loss.push(train_loss);
        report.val_loss.push(val_loss);
        tracker.observe(epoch, val_loss, model.store());
    }

    if opts.epochs == 0 {
        // Nothing trained; current parameters are the checkpoint.
        let val_loss =
            val_set.iter().map(|s| model.eval_sample(s)).sum::<f64>() / val_set.len() as f64;
        tracker.observe(0, val_loss, model.store());
        report.val_loss.push(val_loss);
    }

    tracker.restore_into(model.store_mut());
    report.best_epoch = tracker.best_epoch().unwrap_or(0);
    report.best_val_loss = tracker.best_loss().unwrap_or(f64::INFINITY);
    Ok(report)
}
