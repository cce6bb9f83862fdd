//! Tiny per-anchor MLP with hand-written backpropagation.
//!
//! One shared network maps each anchor's feature vector to nine outputs: a
//! classification logit, seven regression offsets and a direction logit. The
//! hidden activation is tanh so the end-to-end gradient check stays clean.

use crate::geometry::BoxDelta;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const OUT_DIM: usize = 9;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Two dense layers; weights stored row-major (`w1[h * feature_dim + f]`,
/// `w2[o * hidden_dim + h]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Post-squash outputs for one anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorOutput {
    pub p: f64,
    pub offsets: BoxDelta,
    pub p_dir: f64,
}

/// Hidden activations kept around for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub hidden: Vec<f64>,
    pub out: [f64; OUT_DIM],
}

impl ToyModel {
    pub fn new(feature_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = |fan_in: usize, fan_out: usize, n: usize| -> Vec<f64> {
            let scale = (6.0 / (fan_in + fan_out) as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
        };
        let mut b2 = vec![0.0; OUT_DIM];
        // Positives are rare; starting the classification head pessimistic
        // keeps the early negative gradient flood from burying them.
        b2[0] = -2.0;
        Self {
            feature_dim,
            hidden_dim,
            w1: init(feature_dim, hidden_dim, hidden_dim * feature_dim),
            b1: vec![0.0; hidden_dim],
            w2: init(hidden_dim, OUT_DIM, OUT_DIM * hidden_dim),
            b2,
        }
    }

    pub fn zeroed(feature_dim: usize, hidden_dim: usize) -> Self {
        Self {
            feature_dim,
            hidden_dim,
            w1: vec![0.0; hidden_dim * feature_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; OUT_DIM * hidden_dim],
            b2: vec![0.0; OUT_DIM],
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn forward_anchor(&self, features: &[f64]) -> (AnchorOutput, ForwardCache) {
        debug_assert_eq!(features.len(), self.feature_dim);
        let mut hidden = vec![0.0; self.hidden_dim];
        for h in 0..self.hidden_dim {
            let mut acc = self.b1[h];
            let row = &self.w1[h * self.feature_dim..(h + 1) * self.feature_dim];
            for (w, x) in row.iter().zip(features) {
                acc += w * x;
            }
            hidden[h] = acc.tanh();
        }
        let mut out = [0.0; OUT_DIM];
        for (o, slot) in out.iter_mut().enumerate() {
            let mut acc = self.b2[o];
            let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            for (w, h) in row.iter().zip(&hidden) {
                acc += w * h;
            }
            *slot = acc;
        }
        let output = AnchorOutput {
            p: sigmoid(out[0]),
            offsets: BoxDelta::from_array([out[1], out[2], out[3], out[4], out[5], out[6], out[7]]),
            p_dir: sigmoid(out[8]),
        };
        (output, ForwardCache { hidden, out })
    }

    /// Flat view of all parameters, for serialization-free perturbation.
    pub fn param_mut(&mut self, idx: usize) -> &mut f64 {
        let n1 = self.w1.len();
        let n2 = n1 + self.b1.len();
        let n3 = n2 + self.w2.len();
        if idx < n1 {
            &mut self.w1[idx]
        } else if idx < n2 {
            &mut self.b1[idx - n1]
        } else if idx < n3 {
            &mut self.w2[idx - n2]
        } else {
            &mut self.b2[idx - n3]
        }
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ModelGrads {
    pub fn zeros_like(model: &ToyModel) -> Self {
        Self {
            w1: vec![0.0; model.w1.len()],
            b1: vec![0.0; model.b1.len()],
            w2: vec![0.0; model.w2.len()],
            b2: vec![0.0; model.b2.len()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.w1.iter_mut().chain(&mut self.b1).chain(&mut self.w2).chain(&mut self.b2) {
            *v *= s;
        }
    }

    pub fn get(&self, idx: usize) -> f64 {
        let n1 = self.w1.len();
        let n2 = n1 + self.b1.len();
        let n3 = n2 + self.w2.len();
        if idx < n1 {
            self.w1[idx]
        } else if idx < n2 {
            self.b1[idx - n1]
        } else if idx < n3 {
            self.w2[idx - n2]
        } else {
            self.b2[idx - n3]
        }
    }
}

/// Accumulates one anchor's contribution given the loss partials with
/// respect to the nine pre-squash outputs.
pub fn backward_anchor(
    model: &ToyModel,
    features: &[f64],
    cache: &ForwardCache,
    d_out: &[f64; OUT_DIM],
    grads: &mut ModelGrads,
) {
    let mut d_hidden = vec![0.0; model.hidden_dim];
    for o in 0..OUT_DIM {
        let g = d_out[o];
        if g == 0.0 {
            continue;
        }
        grads.b2[o] += g;
        let row = &model.w2[o * model.hidden_dim..(o + 1) * model.hidden_dim];
        let grow = &mut grads.w2[o * model.hidden_dim..(o + 1) * model.hidden_dim];
        for h in 0..model.hidden_dim {
            grow[h] += g * cache.hidden[h];
            d_hidden[h] += g * row[h];
        }
    }
    for h in 0..model.hidden_dim {
        let dh = d_hidden[h] * (1.0 - cache.hidden[h] * cache.hidden[h]);
        if dh == 0.0 {
            continue;
        }
        grads.b1[h] += dh;
        let grow = &mut grads.w1[h * model.feature_dim..(h + 1) * model.feature_dim];
        for (g, x) in grow.iter_mut().zip(features) {
            *g += dh * x;
        }
    }
}

/// Derivative of the logistic squash given the squashed value.
pub fn sigmoid_grad_from_value(p: f64) -> f64 {
    p * (1.0 - p)
}
