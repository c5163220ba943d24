//! Minimal deterministic network substrate shared by the lidar surrogate and
//! the imitation policy: dense layers, circular-azimuth 2-D convolution,
//! average pooling, an LSTM cell, RMSE loss, exact reverse-mode gradients and
//! an Adam optimizer. Everything is f64 and single-threaded by contract so
//! training is bit-reproducible from a seed.

mod adam;
pub mod gradcheck;
mod checkpoint;
mod conv;
mod dense;
mod lstm;
mod params;
mod train;

pub use adam::Adam;
pub use checkpoint::{
    load_checkpoint, load_checkpoint_path, save_checkpoint, save_checkpoint_path, Checkpoint,
    CheckpointError,
};
pub use conv::{AvgPool2d, CircConv2d, Grid};
pub use dense::Dense;
pub use lstm::{LstmCell, LstmStepCache};
pub use params::{init_uniform_fan_in, ParamRange, ParamStore};
pub use train::{train, BestTracker, TrainError, TrainOpts, TrainReport, TrainableModel};

/// Elementwise ReLU; returns output and writes nothing else.
pub fn relu(x: &mut [f64]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Backward of ReLU given the forward output.
pub fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &out) in dy.iter_mut().zip(y.iter()) {
        if out <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn tanh_forward(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.tanh();
    }
}

pub fn tanh_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &out) in dy.iter_mut().zip(y.iter()) {
        *g *= 1.0 - out * out;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Root-mean-square error of a prediction against a target.
pub fn rmse_loss(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len(), "rmse shape mismatch");
    let n = pred.len() as f64;
    let ss: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    (ss / n).sqrt()
}

/// Gradient of [`rmse_loss`] with respect to the prediction. Zero at an
/// exact match (the loss has a kink there; the subgradient 0 is used).
pub fn rmse_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    let loss = rmse_loss(pred, target);
    if loss < 1e-300 {
        return vec![0.0; pred.len()];
    }
    pred.iter()
        .zip(target.iter())
        .map(|(p, t)| (p - t) / (n * loss))
        .collect()
}
