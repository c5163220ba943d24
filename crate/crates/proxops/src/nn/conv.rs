//! 2-D convolution over (azimuth, plane) range-image grids.
//!
//! The azimuth axis wraps (a 360-degree scan), so convolution pads
//! circularly there; the plane axis uses zero padding. The implementation
//! gathers input patches through a precomputed index table and runs tight
//! dot-product loops over them, which keeps the per-sample training cost low
//! on scalar hardware. Average pooling reduces both axes by integer factors.

use rand_chacha::ChaCha8Rng;

use super::params::{init_uniform_fan_in, ParamRange, ParamStore};

/// Shape of a channel grid: `channels x azimuth x planes`, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub channels: usize,
    pub azimuth: usize,
    pub planes: usize,
}

impl Grid {
    pub fn len(&self) -> usize {
        self.channels * self.azimuth * self.planes
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, c: usize, a: usize, p: usize) -> usize {
        (c * self.azimuth + a) * self.planes + p
    }
}

/// Circular-azimuth convolution with odd kernels, azimuth stride, and
/// same-padding on the plane axis.
#[derive(Debug, Clone)]
pub struct CircConv2d {
    pub in_grid: Grid,
    pub out_grid: Grid,
    pub k_az: usize,
    pub k_pl: usize,
    pub stride_az: usize,
    /// Weights, `out_ch x (in_ch * k_az * k_pl)` row-major.
    pub w: ParamRange,
    pub b: ParamRange,
    /// Per output position (row-major `azimuth x planes`), the input index
    /// of each patch tap, or -1 for zero padding. Length
    /// `out_positions * fan_in`.
    gather: Vec<i32>,
    fan_in: usize,
}

impl CircConv2d {
    pub fn new(
        store: &mut ParamStore,
        in_grid: Grid,
        out_ch: usize,
        k_az: usize,
        k_pl: usize,
        stride_az: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(k_az % 2 == 1 && k_pl % 2 == 1, "kernel sizes must be odd");
        assert!(
            in_grid.azimuth % stride_az == 0,
            "azimuth {} not divisible by stride {stride_az}",
            in_grid.azimuth
        );
        let out_grid = Grid {
            channels: out_ch,
            azimuth: in_grid.azimuth / stride_az,
            planes: in_grid.planes,
        };
        let fan_in = in_grid.channels * k_az * k_pl;
        let w = store.alloc(out_ch * fan_in);
        let b = store.alloc(out_ch);
        init_uniform_fan_in(store, w, fan_in, rng);

        let pad_az = (k_az - 1) / 2;
        let pad_pl = (k_pl - 1) / 2;
        let positions = out_grid.azimuth * out_grid.planes;
        let mut gather = Vec::with_capacity(positions * fan_in);
        for ao in 0..out_grid.azimuth {
            for po in 0..out_grid.planes {
                for ic in 0..in_grid.channels {
                    for ka in 0..k_az {
                        let ai = (ao * stride_az + ka + in_grid.azimuth - pad_az)
                            % in_grid.azimuth;
                        for kp in 0..k_pl {
                            let pi = (po + kp) as isize - pad_pl as isize;
                            if pi < 0 || pi >= in_grid.planes as isize {
                                gather.push(-1);
                            } else {
                                gather.push(in_grid.idx(ic, ai, pi as usize) as i32);
                            }
                        }
                    }
                }
            }
        }

        Self {
            in_grid,
            out_grid,
            k_az,
            k_pl,
            stride_az,
            w,
            b,
            gather,
            fan_in,
        }
    }

    fn positions(&self) -> usize {
        self.out_grid.azimuth * self.out_grid.planes
    }

    /// Gather the input patch matrix: `positions x fan_in`, zero-padded.
    fn patches(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_grid.len());
        self.gather
            .iter()
            .map(|&i| if i < 0 { 0.0 } else { x[i as usize] })
            .collect()
    }

    pub fn forward(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let patches = self.patches(x);
        let w = self.w.slice(&store.values);
        let bias = self.b.slice(&store.values);
        let positions = self.positions();
        let mut y = vec![0.0; self.out_grid.len()];
        for oc in 0..self.out_grid.channels {
            let wrow = &w[oc * self.fan_in..(oc + 1) * self.fan_in];
            let yrow = &mut y[oc * positions..(oc + 1) * positions];
            for (pos, out) in yrow.iter_mut().enumerate() {
                let patch = &patches[pos * self.fan_in..(pos + 1) * self.fan_in];
                let mut acc = bias[oc];
                for (wv, xv) in wrow.iter().zip(patch.iter()) {
                    acc += wv * xv;
                }
                *out = acc;
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient. `x`
    /// must match the forward input.
    pub fn backward(&self, store: &mut ParamStore, x: &[f64], dy: &[f64]) -> Vec<f64> {
        debug_assert_eq!(dy.len(), self.out_grid.len());
        let patches = self.patches(x);
        let positions = self.positions();

        // d_patches = sum_oc dy[oc, pos] * w[oc, :]
        let mut d_patches = vec![0.0f64; positions * self.fan_in];
        {
            let w = self.w.slice(&store.values);
            for oc in 0..self.out_grid.channels {
                let wrow = &w[oc * self.fan_in..(oc + 1) * self.fan_in];
                let dyrow = &dy[oc * positions..(oc + 1) * positions];
                for (pos, &g) in dyrow.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let dp = &mut d_patches[pos * self.fan_in..(pos + 1) * self.fan_in];
                    for (d, wv) in dp.iter_mut().zip(wrow.iter()) {
                        *d += g * wv;
                    }
                }
            }
        }

        // dW[oc, :] += sum_pos dy[oc, pos] * patch[pos, :]; db[oc] += sum dy.
        {
            let dw = self.w.slice_mut(&mut store.grads);
            for oc in 0..self.out_grid.channels {
                let dwrow = &mut dw[oc * self.fan_in..(oc + 1) * self.fan_in];
                let dyrow = &dy[oc * positions..(oc + 1) * positions];
                for (pos, &g) in dyrow.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    let patch = &patches[pos * self.fan_in..(pos + 1) * self.fan_in];
                    for (d, xv) in dwrow.iter_mut().zip(patch.iter()) {
                        *d += g * xv;
                    }
                }
            }
            let db = self.b.slice_mut(&mut store.grads);
            for oc in 0..self.out_grid.channels {
                let dyrow = &dy[oc * positions..(oc + 1) * positions];
                db[oc] += dyrow.iter().sum::<f64>();
            }
        }

        // Scatter d_patches back through the gather table.
        let mut dx = vec![0.0f64; self.in_grid.len()];
        for (slot, &i) in self.gather.iter().enumerate() {
            if i >= 0 {
                dx[i as usize] += d_patches[slot];
            }
        }
        dx
    }
}

/// Non-overlapping average pooling.
#[derive(Debug, Clone)]
pub struct AvgPool2d {
    pub in_grid: Grid,
    pub out_grid: Grid,
    pub pool_az: usize,
    pub pool_pl: usize,
}

impl AvgPool2d {
    pub fn new(in_grid: Grid, pool_az: usize, pool_pl: usize) -> Self {
        assert!(in_grid.azimuth % pool_az == 0, "azimuth not divisible");
        assert!(in_grid.planes % pool_pl == 0, "planes not divisible");
        let out_grid = Grid {
            channels: in_grid.channels,
            azimuth: in_grid.azimuth / pool_az,
            planes: in_grid.planes / pool_pl,
        };
        Self {
            in_grid,
            out_grid,
            pool_az,
            pool_pl,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (self.pool_az * self.pool_pl) as f64;
        let mut y = vec![0.0; self.out_grid.len()];
        for c in 0..self.out_grid.channels {
            for ao in 0..self.out_grid.azimuth {
                for po in 0..self.out_grid.planes {
                    let mut acc = 0.0;
                    for da in 0..self.pool_az {
                        for dp in 0..self.pool_pl {
                            acc += x[self
                                .in_grid
                                .idx(c, ao * self.pool_az + da, po * self.pool_pl + dp)];
                        }
                    }
                    y[self.out_grid.idx(c, ao, po)] = acc * inv;
                }
            }
        }
        y
    }

    pub fn backward(&self, dy: &[f64]) -> Vec<f64> {
        let inv = 1.0 / (self.pool_az * self.pool_pl) as f64;
        let mut dx = vec![0.0; self.in_grid.len()];
        for c in 0..self.out_grid.channels {
            for ao in 0..self.out_grid.azimuth {
                for po in 0..self.out_grid.planes {
                    let g = dy[self.out_grid.idx(c, ao, po)] * inv;
                    for da in 0..self.pool_az {
                        for dp in 0..self.pool_pl {
                            dx[self
                                .in_grid
                                .idx(c, ao * self.pool_az + da, po * self.pool_pl + dp)] += g;
                        }
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn circular_shift_equivariance() {
        // Rotating the input by k azimuth rows rotates the (stride-1)
        // feature map by k rows, exactly.
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Grid {
            channels: 2,
            azimuth: 16,
            planes: 4,
        };
        let conv = CircConv2d::new(&mut store, grid, 3, 5, 3, 1, &mut rng);

        let x: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = conv.forward(&store, &x);

        let shift = 5usize;
        let mut x_shift = vec![0.0; x.len()];
        for c in 0..grid.channels {
            for a in 0..grid.azimuth {
                for p in 0..grid.planes {
                    x_shift[grid.idx(c, (a + shift) % grid.azimuth, p)] = x[grid.idx(c, a, p)];
                }
            }
        }
        let y_shift = conv.forward(&store, &x_shift);
        let og = conv.out_grid;
        for c in 0..og.channels {
            for a in 0..og.azimuth {
                for p in 0..og.planes {
                    let lhs = y_shift[og.idx(c, (a + shift) % og.azimuth, p)];
                    let rhs = y[og.idx(c, a, p)];
                    assert_eq!(lhs, rhs, "c {c} a {a} p {p}");
                }
            }
        }
    }

    #[test]
    fn plane_padding_is_zero_not_wrapped() {
        // A single weight at the extreme plane tap must read zeros off the
        // edge, not wrap to the other side.
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = Grid {
            channels: 1,
            azimuth: 4,
            planes: 3,
        };
        let conv = CircConv2d::new(&mut store, grid, 1, 1, 3, 1, &mut rng);
        let w = conv.w.slice_mut(&mut store.values);
        w.fill(0.0);
        w[0] = 1.0; // tap at kp = 0, i.e. plane p-1
        conv.b.slice_mut(&mut store.values).fill(0.0);
        let x: Vec<f64> = (1..=12).map(|v| v as f64).collect();
        let y = conv.forward(&store, &x);
        for a in 0..4 {
            // Output at plane 0 reads the zero pad.
            assert_eq!(y[conv.out_grid.idx(0, a, 0)], 0.0);
            // Plane 2 reads input plane 1.
            assert_eq!(y[conv.out_grid.idx(0, a, 2)], x[grid.idx(0, a, 1)]);
        }
    }

    #[test]
    fn pooling_averages_blocks() {
        let grid = Grid {
            channels: 1,
            azimuth: 4,
            planes: 2,
        };
        let pool = AvgPool2d::new(grid, 2, 2);
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let y = pool.forward(&x);
        assert_eq!(y, vec![2.5, 6.5]);
        let dx = pool.backward(&[4.0, 8.0]);
        assert_eq!(dx, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
