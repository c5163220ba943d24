//! Position-to-frame surrogate: an MLP trained on a grid of raycast scans
//! that synthesizes lidar frames cheaply for disturbed-episode generation.
//!
//! Each output cell has two heads: a miss logit and a squashed range, so the
//! sentinel never bleeds into the regression target. Decoding always yields
//! a valid frame regardless of the network state.

use nalgebra::Vector3;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::lidar::{LidarFrame, MISS_SENTINEL};
use crate::nn::{
    self, sigmoid, train, Dense, ParamStore, TrainError, TrainOpts, TrainableModel,
};
use rand::SeedableRng;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SurrogateSpec {
    /// Hidden layer widths of the MLP (input is the 3-vector position).
    pub hidden: Vec<usize>,
    /// Frame geometry this model emits.
    pub azimuth_count: u32,
    pub plane_count: u32,
    /// Positions are scaled by this half-side before entering the network.
    pub input_scale: f64,
    /// Range head is squashed into (0, max_range].
    pub max_range: f64,
    /// Weight of the miss-classification term in the training loss.
    pub miss_loss_weight: f64,
}

impl SurrogateSpec {
    pub fn cells(&self) -> usize {
        (self.azimuth_count * self.plane_count) as usize
    }
}

/// One training sample: a position and the reference frame scanned there.
#[derive(Debug, Clone)]
pub struct GridSample {
    pub position: Vector3<f64>,
    pub ranges: Vec<f32>,
}

pub struct SurrogateModel {
    pub spec: SurrogateSpec,
    store: ParamStore,
    layers: Vec<Dense>,
}

impl SurrogateModel {
    pub fn new(spec: SurrogateSpec, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_dim = 3;
        for &h in &spec.hidden {
            layers.push(Dense::new(&mut store, in_dim, h, &mut rng));
            in_dim = h;
        }
        // Two heads per cell: ranges first, miss logits second.
        layers.push(Dense::new(&mut store, in_dim, 2 * spec.cells(), &mut rng));
        Self {
            spec,
            store,
            layers,
        }
    }

    fn scaled_input(&self, position: &Vector3<f64>) -> Vec<f64> {
        vec![
            position.x / self.spec.input_scale,
            position.y / self.spec.input_scale,
            position.z / self.spec.input_scale,
        ]
    }

    /// Raw head outputs (pre-decode): `(range_raw, miss_logit)` per cell.
    fn forward_raw(&self, position: &Vector3<f64>) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut activations = vec![self.scaled_input(position)];
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&self.store, activations.last().unwrap());
            if i + 1 < self.layers.len() {
                nn::relu(&mut y);
            }
            activations.push(y);
        }
        let out = activations.pop().unwrap();
        (activations, out)
    }

    /// Decode a raw head vector into a valid frame.
    fn decode(&self, out: &[f64], position: &Vector3<f64>) -> LidarFrame {
        let cells = self.spec.cells();
        let mut ranges = Vec::with_capacity(cells);
        for i in 0..cells {
            let miss_logit = out[cells + i];
            if miss_logit > 0.0 {
                ranges.push(MISS_SENTINEL);
            } else {
                // sigmoid keeps the range strictly inside (0, max_range).
                let r = sigmoid(out[i]) * self.spec.max_range;
                let r = (r as f32).clamp(f32::MIN_POSITIVE, self.spec.max_range as f32);
                ranges.push(r);
            }
        }
        LidarFrame {
            azimuth_count: self.spec.azimuth_count,
            plane_count: self.spec.plane_count,
            ranges,
            pose_position: *position,
            t: 0.0,
        }
    }

    /// Synthesize the expected frame at `position`; always a valid frame.
    pub fn generate_frame(&self, position: &Vector3<f64>) -> LidarFrame {
        let (_, out) = self.forward_raw(position);
        self.decode(&out, position)
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), nn::CheckpointError> {
        let spec = serde_json::to_value(&self.spec).expect("spec serializes");
        nn::save_checkpoint_path(path, "surrogate", &spec, &self.store)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, nn::CheckpointError> {
        let ck = nn::load_checkpoint_path(path)?;
        if ck.kind != "surrogate" {
            return Err(nn::CheckpointError::Format(format!(
                "expected a surrogate checkpoint, found {:?}",
                ck.kind
            )));
        }
        let spec: SurrogateSpec = serde_json::from_value(ck.spec)?;
        let mut model = Self::new(spec, 0);
        if ck.params.len() != model.store.len() {
            return Err(nn::CheckpointError::Format(
                "parameter count does not match the spec".into(),
            ));
        }
        model.store.restore(&ck.params);
        Ok(model)
    }

    /// Per-sample loss and the gradient at the raw heads. The loss is BCE on
    /// the miss head everywhere plus squared error on the normalized range
    /// over hit cells.
    fn loss_and_head_grad(&self, sample: &GridSample) -> (f64, Vec<Vec<f64>>, Vec<f64>) {
        let cells = self.spec.cells();
        let (activations, out) = self.forward_raw(&sample.position);
        let mut loss = 0.0;
        let mut dout = vec![0.0f64; out.len()];
        let inv_cells = 1.0 / cells as f64;
        let w_miss = self.spec.miss_loss_weight;

        let n_hit = sample
            .ranges
            .iter()
            .filter(|&&r| r != MISS_SENTINEL)
            .count();
        let inv_hit = if n_hit > 0 { 1.0 / n_hit as f64 } else { 0.0 };

        for i in 0..cells {
            let is_miss = sample.ranges[i] == MISS_SENTINEL;
            let logit = out[cells + i];
            let y = if is_miss { 1.0 } else { 0.0 };
            // Numerically stable BCE with logits.
            let bce = logit.max(0.0) - logit * y + (1.0 + (-logit.abs()).exp()).ln();
            loss += w_miss * inv_cells * bce;
            dout[cells + i] = w_miss * inv_cells * (sigmoid(logit) - y);

            if !is_miss {
                let target = f64::from(sample.ranges[i]) / self.spec.max_range;
                let pred = sigmoid(out[i]);
                let e = pred - target;
                loss += inv_hit * e * e;
                dout[i] = inv_hit * 2.0 * e * pred * (1.0 - pred);
            }
        }
        (loss, activations, dout)
    }
}

impl TrainableModel for SurrogateModel {
    type Sample = GridSample;

    fn backward_sample(&mut self, sample: &GridSample) -> f64 {
        let (loss, activations, dout) = self.loss_and_head_grad(sample);
        let mut grad = dout;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                // The stored activation is post-ReLU.
                nn::relu_backward(&activations[i + 1], &mut grad);
            }
            grad = layer.backward(&mut self.store, &activations[i], &grad);
        }
        loss
    }

    fn eval_sample(&self, sample: &GridSample) -> f64 {
        self.loss_and_head_grad(sample).0
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

/// Quality report on the held-out grid split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub train_samples: usize,
    pub val_samples: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// RMSE over hit cells where both frames agree on a hit, meters.
    pub hit_range_rmse: f64,
    /// Same statistic over the training split (interpolation-gap
    /// diagnostic).
    pub train_hit_range_rmse: f64,
    /// Fraction of cells whose hit/miss classification disagrees.
    pub miss_classification_rate: f64,
}

/// Train a surrogate on the grid dataset (90/10 split by deterministic
/// shuffle) and report held-out accuracy.
pub fn train_surrogate(
    samples: &[GridSample],
    spec: SurrogateSpec,
    opts: &TrainOpts,
) -> Result<(SurrogateModel, SurrogateReport), TrainError> {
    use rand::seq::SliceRandom;
    if samples.is_empty() {
        return Err(TrainError::EmptySplit("grid"));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9E37);
    order.shuffle(&mut rng);
    let n_val = (samples.len() / 10).max(1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_set: Vec<GridSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let val_set: Vec<GridSample> = val_idx.iter().map(|&i| samples[i].clone()).collect();

    let mut model = SurrogateModel::new(spec, opts.seed);
    let report = train(&mut model, &train_set, &val_set, opts)?;

    // Frame accuracy on both splits.
    let frame_stats = |set: &[GridSample]| {
        let mut sq_sum = 0.0;
        let mut n_hits = 0u64;
        let mut n_mismatch = 0u64;
        let mut n_cells = 0u64;
        for s in set {
            let frame = model.generate_frame(&s.position);
            for (i, &truth) in s.ranges.iter().enumerate() {
                let pred = frame.ranges[i];
                let truth_miss = truth == MISS_SENTINEL;
                let pred_miss = pred == MISS_SENTINEL;
                n_cells += 1;
                if truth_miss != pred_miss {
                    n_mismatch += 1;
                }
                if !truth_miss && !pred_miss {
                    let d = f64::from(pred) - f64::from(truth);
                    sq_sum += d * d;
                    n_hits += 1;
                }
            }
        }
        let rmse = if n_hits > 0 {
            (sq_sum / n_hits as f64).sqrt()
        } else {
            0.0
        };
        (rmse, n_mismatch as f64 / n_cells.max(1) as f64)
    };
    let (val_rmse, val_mismatch) = frame_stats(&val_set);
    let (train_rmse, _) = frame_stats(&train_set);
    let sreport = SurrogateReport {
        train_samples: train_set.len(),
        val_samples: val_set.len(),
        best_epoch: report.best_epoch,
        best_val_loss: report.best_val_loss,
        hit_range_rmse: val_rmse,
        train_hit_range_rmse: train_rmse,
        miss_classification_rate: val_mismatch,
    };
    Ok((model, sreport))
}
