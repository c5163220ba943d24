//! Single LSTM cell with explicit backpropagation through time.

use rand_chacha::ChaCha8Rng;

use super::params::{init_uniform_fan_in, ParamRange, ParamStore};
use super::sigmoid;

/// Gate order within the stacked 4H rows: input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub in_dim: usize,
    pub hidden: usize,
    /// `4H x in_dim`, row-major.
    pub w_ih: ParamRange,
    /// `4H x H`, row-major.
    pub w_hh: ParamRange,
    /// `4H`.
    pub b: ParamRange,
}

/// Forward cache of one step, kept for BPTT.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub gate_i: Vec<f64>,
    pub gate_f: Vec<f64>,
    pub gate_g: Vec<f64>,
    pub gate_o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, in_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_ih = store.alloc(4 * hidden * in_dim);
        let w_hh = store.alloc(4 * hidden * hidden);
        let b = store.alloc(4 * hidden);
        init_uniform_fan_in(store, w_ih, in_dim, rng);
        init_uniform_fan_in(store, w_hh, hidden, rng);
        Self {
            in_dim,
            hidden,
            w_ih,
            w_hh,
            b,
        }
    }

    pub fn step(
        &self,
        store: &ParamStore,
        x: &[f64],
        h_prev: &[f64],
        c_prev: &[f64],
    ) -> LstmStepCache {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(h_prev.len(), self.hidden);
        let hdim = self.hidden;
        let w_ih = self.w_ih.slice(&store.values);
        let w_hh = self.w_hh.slice(&store.values);
        let b = self.b.slice(&store.values);

        let mut z = vec![0.0f64; 4 * hdim];
        for (row, zr) in z.iter_mut().enumerate() {
            let mut acc = b[row];
            let wi = &w_ih[row * self.in_dim..(row + 1) * self.in_dim];
            for (w, xv) in wi.iter().zip(x.iter()) {
                acc += w * xv;
            }
            let wh = &w_hh[row * hdim..(row + 1) * hdim];
            for (w, hv) in wh.iter().zip(h_prev.iter()) {
                acc += w * hv;
            }
            *zr = acc;
        }

        let mut gate_i = vec![0.0; hdim];
        let mut gate_f = vec![0.0; hdim];
        let mut gate_g = vec![0.0; hdim];
        let mut gate_o = vec![0.0; hdim];
        let mut c = vec![0.0; hdim];
        let mut h = vec![0.0; hdim];
        for j in 0..hdim {
            gate_i[j] = sigmoid(z[j]);
            gate_f[j] = sigmoid(z[hdim + j]);
            gate_g[j] = z[2 * hdim + j].tanh();
            gate_o[j] = sigmoid(z[3 * hdim + j]);
            c[j] = gate_f[j] * c_prev[j] + gate_i[j] * gate_g[j];
            h[j] = gate_o[j] * c[j].tanh();
        }

        LstmStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gate_i,
            gate_f,
            gate_g,
            gate_o,
            c,
            h,
        }
    }

    /// One BPTT step. Takes the gradients flowing into this step's `h` and
    /// `c`, accumulates parameter gradients, and returns
    /// `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        store: &mut ParamStore,
        cache: &LstmStepCache,
        dh: &[f64],
        dc_in: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hdim = self.hidden;
        let mut dz = vec![0.0f64; 4 * hdim];
        let mut dc_prev = vec![0.0f64; hdim];

        for j in 0..hdim {
            let tc = cache.c[j].tanh();
            let d_o = dh[j] * tc;
            let mut dc = dc_in[j] + dh[j] * cache.gate_o[j] * (1.0 - tc * tc);
            let d_i = dc * cache.gate_g[j];
            let d_g = dc * cache.gate_i[j];
            let d_f = dc * cache.c_prev[j];
            dc *= cache.gate_f[j];
            dc_prev[j] = dc;

            dz[j] = d_i * cache.gate_i[j] * (1.0 - cache.gate_i[j]);
            dz[hdim + j] = d_f * cache.gate_f[j] * (1.0 - cache.gate_f[j]);
            dz[2 * hdim + j] = d_g * (1.0 - cache.gate_g[j] * cache.gate_g[j]);
            dz[3 * hdim + j] = d_o * cache.gate_o[j] * (1.0 - cache.gate_o[j]);
        }

        let mut dx = vec![0.0f64; self.in_dim];
        let mut dh_prev = vec![0.0f64; hdim];
        {
            let w_ih = self.w_ih.slice(&store.values);
            let w_hh = self.w_hh.slice(&store.values);
            for (row, g) in dz.iter().enumerate() {
                if *g == 0.0 {
                    continue;
                }
                let wi = &w_ih[row * self.in_dim..(row + 1) * self.in_dim];
                for (dxi, w) in dx.iter_mut().zip(wi.iter()) {
                    *dxi += w * g;
                }
                let wh = &w_hh[row * hdim..(row + 1) * hdim];
                for (dhi, w) in dh_prev.iter_mut().zip(wh.iter()) {
                    *dhi += w * g;
                }
            }
        }
        {
            let dw_ih = self.w_ih.slice_mut(&mut store.grads);
            for (row, g) in dz.iter().enumerate() {
                let wrow = &mut dw_ih[row * self.in_dim..(row + 1) * self.in_dim];
                for (wg, xv) in wrow.iter_mut().zip(cache.x.iter()) {
                    *wg += g * xv;
                }
            }
        }
        {
            let dw_hh = self.w_hh.slice_mut(&mut store.grads);
            for (row, g) in dz.iter().enumerate() {
                let wrow = &mut dw_hh[row * hdim..(row + 1) * hdim];
                for (wg, hv) in wrow.iter_mut().zip(cache.h_prev.iter()) {
                    *wg += g * hv;
                }
            }
        }
        let db = self.b.slice_mut(&mut store.grads);
        for (bg, g) in db.iter_mut().zip(dz.iter()) {
            *bg += g;
        }

        (dx, dh_prev, dc_prev)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_parameters_and_state_give_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = LstmCell::new(&mut store, 3, 4, &mut rng);
        store.values.fill(0.0);
        let cache = cell.step(&store, &[1.0, -2.0, 3.0], &[0.0; 4], &[0.0; 4]);
        assert!(cache.h.iter().all(|&v| v == 0.0));
        assert!(cache.c.iter().all(|&v| v == 0.0));
    }
}
