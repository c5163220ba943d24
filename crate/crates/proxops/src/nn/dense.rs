//! Fully connected layer.

use rand_chacha::ChaCha8Rng;

use super::params::{init_uniform_fan_in, ParamRange, ParamStore};

#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Weights, row-major `out_dim x in_dim`.
    pub w: ParamRange,
    /// Biases, `out_dim`.
    pub b: ParamRange,
}

impl Dense {
    pub fn new(store: &mut ParamStore, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = store.alloc(in_dim * out_dim);
        let b = store.alloc(out_dim);
        init_uniform_fan_in(store, w, in_dim, rng);
        Self {
            in_dim,
            out_dim,
            w,
            b,
        }
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let w = self.w.slice(&store.values);
        let b = self.b.slice(&store.values);
        let mut y = Vec::with_capacity(self.out_dim);
        for o in 0..self.out_dim {
            let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(x.iter()) {
                acc += wi * xi;
            }
            y.push(acc);
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    /// `x` must be the same input passed to the matching forward call.
    pub fn backward(&self, store: &mut ParamStore, x: &[f64], dy: &[f64]) -> Vec<f64> {
        debug_assert_eq!(dy.len(), self.out_dim);
        let mut dx = vec![0.0; self.in_dim];
        {
            let w = self.w.slice(&store.values);
            for o in 0..self.out_dim {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                let g = dy[o];
                for (dxi, wi) in dx.iter_mut().zip(row.iter()) {
                    *dxi += wi * g;
                }
            }
        }
        let dw = self.w.slice_mut(&mut store.grads);
        for o in 0..self.out_dim {
            let g = dy[o];
            let row = &mut dw[o * self.in_dim..(o + 1) * self.in_dim];
            for (di, xi) in row.iter_mut().zip(x.iter()) {
                *di += g * xi;
            }
        }
        let db = self.b.slice_mut(&mut store.grads);
        for (dbo, g) in db.iter_mut().zip(dy.iter()) {
            *dbo += g;
        }
        dx
    }
}
