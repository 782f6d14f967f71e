//! One-hidden-layer perceptron shared by the context models, with manual
//! backpropagation and an Adam optimizer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// `out = W2 tanh(W1 x + b1) + b2`.
///
/// Parameters live in one flat vector laid out as `[W1, b1, W2, b2]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    inputs: usize,
    hidden: usize,
    outputs: usize,
    params: Vec<f64>,
}

impl Mlp {
    pub fn param_count_for(inputs: usize, hidden: usize, outputs: usize) -> usize {
        hidden * inputs + hidden + outputs * hidden + outputs
    }

    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Mlp { inputs, hidden, outputs, params: vec![0.0; Self::param_count_for(inputs, hidden, outputs)] }
    }

    /// Uniform Glorot initialization; the output layer is further scaled by
    /// `output_gain` so a fresh model starts close to the zero map.
    pub fn seeded(inputs: usize, hidden: usize, outputs: usize, seed: u64, output_gain: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(inputs, hidden, outputs);
        let a1 = (6.0 / (inputs + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + outputs) as f64).sqrt() * output_gain;
        let (w1, rest) = m.params.split_at_mut(hidden * inputs);
        for w in w1 {
            *w = rng.random_range(-a1..a1);
        }
        if a2 > 0.0 {
            for w in &mut rest[hidden..hidden + outputs * hidden] {
                *w = rng.random_range(-a2..a2);
            }
        }
        m
    }

    pub fn from_params(inputs: usize, hidden: usize, outputs: usize, params: Vec<f64>) -> Option<Self> {
        (params.len() == Self::param_count_for(inputs, hidden, outputs))
            .then_some(Mlp { inputs, hidden, outputs, params })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Round every weight to the nearest `f32`, the precision stored on disk.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        (b1, w2, b2)
    }

    /// Forward pass; `hidden` receives the post-activation values.
    pub fn forward(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.inputs);
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &p[j * self.inputs..(j + 1) * self.inputs];
            let z = dot(row, x) + p[b1 + j];
            *h = z.tanh();
        }
        for (k, o) in out.iter_mut().enumerate() {
            let row = &p[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
            *o = dot(row, hidden) + p[b2 + k];
        }
    }

    /// Accumulate `d loss / d params` into `grads` given `d loss / d out`.
    pub fn backward(&self, x: &[f64], hidden: &[f64], grad_out: &[f64], grads: &mut [f64]) {
        let (b1, w2, b2) = self.offsets();
        let p = &self.params;
        for (k, &g) in grad_out.iter().enumerate() {
            grads[b2 + k] += g;
            let row = &mut grads[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
            for (r, h) in row.iter_mut().zip(hidden) {
                *r += g * h;
            }
        }
        for j in 0..self.hidden {
            let mut gh = 0.0;
            for (k, &g) in grad_out.iter().enumerate() {
                gh += g * p[w2 + k * self.hidden + j];
            }
            let gz = gh * (1.0 - hidden[j] * hidden[j]);
            if gz == 0.0 {
                continue;
            }
            grads[b1 + j] += gz;
            let row = &mut grads[j * self.inputs..(j + 1) * self.inputs];
            for (r, v) in row.iter_mut().zip(x) {
                *r += gz * v;
            }
        }
    }
}

/// Dot product over four fixed lanes, so the summation order is the same on every run.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(params: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; params], v: vec![0.0; params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Samples per work unit when accumulating gradients in parallel. Fixed so the
/// floating-point summation order does not depend on the thread count.
pub const GRAD_CHUNK: usize = 64;

/// Sum `f(sample, grads) -> loss` over `samples`, in fixed chunks reduced in order.
pub fn accumulate<F>(samples: &[usize], params: usize, f: F) -> (f64, Vec<f64>)
where
    F: Fn(usize, &mut [f64]) -> f64 + Sync,
{
    let partials: Vec<(f64, Vec<f64>)> = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut g = vec![0.0; params];
            let loss = chunk.iter().map(|&s| f(s, &mut g)).sum::<f64>();
            (loss, g)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = vec![0.0; params];
    for (l, g) in partials {
        total += l;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
    }
    (total, grads)
}

/// Central finite-difference gradient of `loss` with respect to every parameter.
pub fn finite_difference<F>(params: &[f64], step: f64, loss: F) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + step;
            let up = loss(&p);
            p[i] = orig - step;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest relative deviation between two gradients, `|a-b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
