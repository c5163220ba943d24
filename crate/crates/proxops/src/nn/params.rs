//! Flat parameter storage shared by all layers of a network.
//!
//! Layers hold ranges into one contiguous value/gradient buffer; the
//! optimizer, checkpointing and best-snapshot logic then work on plain
//! slices in a stable order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRange {
    pub start: usize,
    pub len: usize,
}

impl ParamRange {
    pub fn slice<'a>(&self, buf: &'a [f64]) -> &'a [f64] {
        &buf[self.start..self.start + self.len]
    }

    pub fn slice_mut<'a>(&self, buf: &'a mut [f64]) -> &'a mut [f64] {
        &mut buf[self.start..self.start + self.len]
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, len: usize) -> ParamRange {
        let start = self.values.len();
        self.values.resize(start + len, 0.0);
        self.grads.resize(start + len, 0.0);
        ParamRange { start, len }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.grads.fill(0.0);
    }

    pub fn scale_grads(&mut self, s: f64) {
        for g in &mut self.grads {
            *g *= s;
        }
    }

    pub fn snapshot(&self) -> Vec<f64> {
        self.values.clone()
    }

    pub fn restore(&mut self, snapshot: &[f64]) {
        assert_eq!(snapshot.len(), self.values.len());
        self.values.copy_from_slice(snapshot);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Fan-in-scaled uniform initialization on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
pub fn init_uniform_fan_in(
    store: &mut ParamStore,
    range: ParamRange,
    fan_in: usize,
    rng: &mut ChaCha8Rng,
) {
    let s = 1.0 / (fan_in.max(1) as f64).sqrt();
    for v in range.slice_mut(&mut store.values) {
        *v = rng.random_range(-s..s);
    }
}
