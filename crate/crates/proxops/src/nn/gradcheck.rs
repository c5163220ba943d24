//! Central-finite-difference gradient verification for every layer kind.
//!
//! The checks drive each layer through a scalar probe loss (a fixed random
//! weighting of the outputs) and compare analytic parameter and input
//! gradients against central differences in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::conv::{AvgPool2d, CircConv2d, Grid};
use super::dense::Dense;
use super::lstm::LstmCell;
use super::params::ParamStore;
use super::{relu, relu_backward, tanh_backward, tanh_forward};

/// Result of one layer's check: worst relative error over all parameters.
#[derive(Debug, Clone)]
pub struct GradCheckResult {
    pub layer: &'static str,
    pub worst_rel_error: f64,
    pub n_params: usize,
}

const FD_STEP: f64 = 1e-5;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Generic parameter check: `f(store) -> scalar loss` with analytic
/// gradients already accumulated in `store.grads`.
fn check_params<F: FnMut(&ParamStore) -> f64>(
    store: &mut ParamStore,
    mut loss: F,
    layer: &'static str,
) -> GradCheckResult {
    let mut worst: f64 = 0.0;
    let n = store.values.len();
    for i in 0..n {
        let orig = store.values[i];
        store.values[i] = orig + FD_STEP;
        let up = loss(store);
        store.values[i] = orig - FD_STEP;
        let down = loss(store);
        store.values[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_error(store.grads[i], numeric));
    }
    GradCheckResult {
        layer,
        worst_rel_error: worst,
        n_params: n,
    }
}

fn probe(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn check_dense() -> GradCheckResult {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let layer = Dense::new(&mut store, 7, 5, &mut rng);
    let x = probe(11, 7);
    let w_out = probe(12, 5);

    store.zero_grads();
    let y = layer.forward(&store, &x);
    let _ = y;
    let dy = w_out.clone();
    let _ = layer.backward(&mut store, &x, &dy);

    check_params(
        &mut store,
        |s| {
            layer
                .forward(s, &x)
                .iter()
                .zip(w_out.iter())
                .map(|(a, b)| a * b)
                .sum()
        },
        "dense",
    )
}

pub fn check_circular_conv() -> GradCheckResult {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let grid = Grid {
        channels: 2,
        azimuth: 12,
        planes: 4,
    };
    let layer = CircConv2d::new(&mut store, grid, 3, 5, 3, 2, &mut rng);
    let x = probe(21, grid.len());
    let w_out = probe(22, layer.out_grid.len());

    store.zero_grads();
    let _ = layer.forward(&store, &x);
    let _ = layer.backward(&mut store, &x, &w_out);

    check_params(
        &mut store,
        |s| {
            layer
                .forward(s, &x)
                .iter()
                .zip(w_out.iter())
                .map(|(a, b)| a * b)
                .sum()
        },
        "circular_conv2d",
    )
}

/// AvgPool has no parameters; its input gradient is checked instead.
pub fn check_avg_pool() -> GradCheckResult {
    let grid = Grid {
        channels: 2,
        azimuth: 6,
        planes: 4,
    };
    let layer = AvgPool2d::new(grid, 3, 2);
    let mut x = probe(31, grid.len());
    let w_out = probe(32, layer.out_grid.len());

    let loss = |x: &[f64]| -> f64 {
        layer
            .forward(x)
            .iter()
            .zip(w_out.iter())
            .map(|(a, b)| a * b)
            .sum()
    };
    let dx = layer.backward(&w_out);
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = loss(&x);
        x[i] = orig - FD_STEP;
        let down = loss(&x);
        x[i] = orig;
        worst = worst.max(rel_error(dx[i], (up - down) / (2.0 * FD_STEP)));
    }
    GradCheckResult {
        layer: "avg_pool2d",
        worst_rel_error: worst,
        n_params: x.len(),
    }
}

pub fn check_lstm() -> GradCheckResult {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let cell = LstmCell::new(&mut store, 5, 4, &mut rng);
    // Three-step sequence to exercise BPTT through both h and c paths.
    let xs: Vec<Vec<f64>> = (0..3).map(|k| probe(41 + k, 5)).collect();
    let w_out = probe(50, 4);

    let run = |s: &ParamStore| -> (f64, Vec<super::lstm::LstmStepCache>) {
        let mut h = vec![0.0; 4];
        let mut c = vec![0.0; 4];
        let mut caches = Vec::new();
        for x in &xs {
            let cache = cell.step(s, x, &h, &c);
            h = cache.h.clone();
            c = cache.c.clone();
            caches.push(cache);
        }
        let loss = h.iter().zip(w_out.iter()).map(|(a, b)| a * b).sum();
        (loss, caches)
    };

    store.zero_grads();
    let (_, caches) = run(&store);
    let mut dh = w_out.clone();
    let mut dc = vec![0.0; 4];
    for cache in caches.iter().rev() {
        let (_, dh_prev, dc_prev) = cell.step_backward(&mut store, cache, &dh, &dc);
        dh = dh_prev;
        dc = dc_prev;
    }

    check_params(&mut store, |s| run(s).0, "lstm")
}

pub fn check_activations() -> Vec<GradCheckResult> {
    let x0 = probe(60, 9);
    let w_out = probe(61, 9);
    let mut results = Vec::new();

    // ReLU (probe offsets keep values away from the kink).
    {
        let x: Vec<f64> = x0.iter().map(|v| v + 0.01 * v.signum()).collect();
        let loss = |x: &[f64]| -> f64 {
            let mut y = x.to_vec();
            relu(&mut y);
            y.iter().zip(w_out.iter()).map(|(a, b)| a * b).sum()
        };
        let mut y = x.clone();
        relu(&mut y);
        let mut dx = w_out.clone();
        relu_backward(&y, &mut dx);
        let mut worst: f64 = 0.0;
        let mut xm = x.clone();
        for i in 0..x.len() {
            let orig = xm[i];
            xm[i] = orig + FD_STEP;
            let up = loss(&xm);
            xm[i] = orig - FD_STEP;
            let down = loss(&xm);
            xm[i] = orig;
            worst = worst.max(rel_error(dx[i], (up - down) / (2.0 * FD_STEP)));
        }
        results.push(GradCheckResult {
            layer: "relu",
            worst_rel_error: worst,
            n_params: x.len(),
        });
    }

    // Tanh.
    {
        let loss = |x: &[f64]| -> f64 {
            let mut y = x.to_vec();
            tanh_forward(&mut y);
            y.iter().zip(w_out.iter()).map(|(a, b)| a * b).sum()
        };
        let mut y = x0.clone();
        tanh_forward(&mut y);
        let mut dx = w_out.clone();
        tanh_backward(&y, &mut dx);
        let mut worst: f64 = 0.0;
        let mut xm = x0.clone();
        for i in 0..x0.len() {
            let orig = xm[i];
            xm[i] = orig + FD_STEP;
            let up = loss(&xm);
            xm[i] = orig - FD_STEP;
            let down = loss(&xm);
            xm[i] = orig;
            worst = worst.max(rel_error(dx[i], (up - down) / (2.0 * FD_STEP)));
        }
        results.push(GradCheckResult {
            layer: "tanh",
            worst_rel_error: worst,
            n_params: x0.len(),
        });
    }

    results
}

/// Run every layer-kind check; each must beat the 1e-4 relative tolerance.
pub fn check_all_layers() -> Vec<GradCheckResult> {
    let mut out = vec![
        check_dense(),
        check_circular_conv(),
        check_avg_pool(),
        check_lstm(),
    ];
    out.extend(check_activations());
    out
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
