//! Multilayer perceptron regressor.
//!
//! Rectifier hidden layers, a linear output, squared-error loss with an L2
//! penalty, and Adam updates over shuffled mini-batches. Inputs are
//! standardized with per-feature statistics learned at training time; the
//! transform is part of the model so prediction takes raw features.
//!
//! Mini-batch gradients are computed over fixed-size chunks and summed in
//! chunk order, so the parallel and serial paths give identical results.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ExecMode, Trained};
use crate::error::{Error, Result};
use crate::features::Dataset;
use crate::rng::{self, tag};

const GRAD_CHUNK: usize = 64;
const PREDICT_BLOCK: usize = 1024;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub mode: ExecMode,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: vec![100],
            epochs: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            l2: 1e-4,
            mode: ExecMode::Deterministic,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Param("MLP needs at least one non-empty hidden layer".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Param("epochs and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.l2 >= 0.0) {
            return Err(Error::Param("learning rate must be positive and L2 non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `inputs x outputs`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    pub layers: Vec<Layer>,
}

/// Gradient of the batch loss, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

impl MlpModel {
    /// Glorot-uniform initialized network with identity standardization.
    pub fn init(input: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = (6.0 / (w[0] + w[1]) as f64).sqrt();
                Layer {
                    weights: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..bound)),
                    bias: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound)),
                }
            })
            .collect();
        MlpModel {
            mean: Array1::zeros(input),
            scale: Array1::ones(input),
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    /// Verifies that layer shapes chain from the input to a single output.
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Format(format!("inconsistent network: {m}")));
        if self.scale.len() != self.mean.len() || self.layers.is_empty() {
            return bad("standardization or layers");
        }
        let mut width = self.mean.len();
        for layer in &self.layers {
            if layer.weights.nrows() != width || layer.bias.len() != layer.weights.ncols() {
                return bad("layer shapes");
            }
            width = layer.weights.ncols();
        }
        if width != 1 {
            return bad("output width");
        }
        Ok(())
    }

    fn standardize(&self, x: &mut Array2<f64>) {
        for mut row in x.rows_mut() {
            row -= &self.mean;
            row /= &self.scale;
        }
    }

    /// Raw (unclipped) outputs for raw feature rows, plus every layer's
    /// pre-activation and activation when `keep` is set.
    fn forward(&self, raw: ArrayView2<f64>) -> (Array1<f64>, Vec<Array2<f64>>) {
        let mut a = raw.to_owned();
        self.standardize(&mut a);
        let mut acts = vec![a];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = acts[l].dot(&layer.weights);
            z += &layer.bias;
            if l < last {
                z.mapv_inplace(relu);
            }
            acts.push(z);
        }
        let out = acts.pop().unwrap().column(0).to_owned();
        (out, acts)
    }

    /// Raw network outputs, no clipping.
    pub fn raw_outputs(&self, raw: ArrayView2<f64>) -> Array1<f64> {
        self.forward(raw).0
    }

    fn penalty(&self) -> f64 {
        self.layers.iter().map(|l| l.weights.iter().map(|w| w * w).sum::<f64>()).sum()
    }

    /// Batch objective `sum((f(x) - y)^2) / 2B + l2 * sum(W^2) / 2B`.
    pub fn loss(&self, x: ArrayView2<f64>, y: &[f64], l2: f64) -> f64 {
        let b = y.len() as f64;
        let out = self.raw_outputs(x);
        let sse: f64 = out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum();
        (sse + l2 * self.penalty()) / (2.0 * b)
    }

    /// Sum over rows of `(f(x) - y)^2 / 2` and its gradient, no penalty.
    fn chunk_gradient(&self, x: ArrayView2<f64>, y: &[f64]) -> (f64, Vec<LayerGrad>) {
        let (out, acts) = self.forward(x);
        let mut delta = Array2::from_shape_fn((y.len(), 1), |(i, _)| out[i] - y[i]);
        let half_sse = delta.iter().map(|d| d * d).sum::<f64>() / 2.0;
        let mut grads = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &acts[l];
            grads.push(LayerGrad {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights.t());
                // acts[l] is the rectified output of layer l - 1
                ndarray::Zip::from(&mut back).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
        }
        grads.reverse();
        (half_sse, grads)
    }

    /// Batch objective and its gradient by backpropagation. Rows are split
    /// into fixed chunks whose gradients are summed in order.
    pub fn loss_and_gradient(&self, x: ArrayView2<f64>, y: &[f64], l2: f64, mode: ExecMode) -> (f64, Vec<LayerGrad>) {
        let n = y.len();
        let starts: Vec<usize> = (0..n).step_by(GRAD_CHUNK).collect();
        let chunk = |&s: &usize| {
            let e = (s + GRAD_CHUNK).min(n);
            self.chunk_gradient(x.slice(s![s..e, ..]), &y[s..e])
        };
        let parts: Vec<(f64, Vec<LayerGrad>)> = match mode {
            ExecMode::Deterministic => starts.iter().map(chunk).collect(),
            ExecMode::Fast => starts.par_iter().map(chunk).collect(),
        };
        let mut iter = parts.into_iter();
        let (mut sse, mut grads) = iter.next().expect("batch is non-empty");
        for (s, g) in iter {
            sse += s;
            for (acc, part) in grads.iter_mut().zip(g) {
                acc.weights += &part.weights;
                acc.bias += &part.bias;
            }
        }
        let b = n as f64;
        for (g, layer) in grads.iter_mut().zip(&self.layers) {
            g.weights.scaled_add(l2, &layer.weights);
            g.weights /= b;
            g.bias /= b;
        }
        ((sse + 0.5 * l2 * self.penalty()) / b, grads)
    }

    /// Mutable views of every parameter, layer by layer (weights, then bias).
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// Predictions clipped to `[0, 1]` for raw feature rows.
    pub fn predict_rows(&self, raw: ArrayView2<f64>) -> Vec<f64> {
        self.raw_outputs(raw).iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }

    pub fn predict(&self, features: &[f32]) -> Result<f64> {
        if features.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                found: features.len(),
            });
        }
        let x = Array2::from_shape_fn((1, features.len()), |(_, j)| features[j] as f64);
        Ok(self.predict_rows(x.view())[0])
    }

    pub fn predict_dataset(&self, ds: &Dataset) -> Result<Vec<f64>> {
        if ds.dim() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                found: ds.dim(),
            });
        }
        let mut out = Vec::with_capacity(ds.len());
        let mut buf = vec![0.0f32; ds.dim()];
        for start in (0..ds.len()).step_by(PREDICT_BLOCK) {
            let end = (start + PREDICT_BLOCK).min(ds.len());
            let x = gather(ds, start..end, &mut buf);
            out.extend(self.predict_rows(x.view()));
        }
        Ok(out)
    }
}

fn gather(ds: &Dataset, rows: impl ExactSizeIterator<Item = usize>, buf: &mut [f32]) -> Array2<f64> {
    let mut x = Array2::zeros((rows.len(), ds.dim()));
    for (r, i) in rows.enumerate() {
        ds.fill_row(i, buf);
        for (dst, &v) in x.row_mut(r).iter_mut().zip(buf.iter()) {
            *dst = v as f64;
        }
    }
    x
}

fn feature_statistics(ds: &Dataset) -> (Array1<f64>, Array1<f64>) {
    let d = ds.dim();
    let mut sum = vec![0.0f64; d];
    let mut sumsq = vec![0.0f64; d];
    let mut buf = vec![0.0f32; d];
    for i in 0..ds.len() {
        ds.fill_row(i, &mut buf);
        for ((s, q), &v) in sum.iter_mut().zip(&mut sumsq).zip(&buf) {
            let v = v as f64;
            *s += v;
            *q += v * v;
        }
    }
    let n = ds.len() as f64;
    let mean: Array1<f64> = sum.iter().map(|s| s / n).collect();
    let scale = sumsq
        .iter()
        .zip(mean.iter())
        .map(|(q, m)| {
            let var = (q / n - m * m).max(0.0);
            if var > 1e-24 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

struct Adam {
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(params: usize) -> Self {
        Adam {
            step: 0,
            m: vec![0.0; params],
            v: vec![0.0; params],
        }
    }

    fn apply(&mut self, model: &mut MlpModel, grads: &[LayerGrad], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - BETA1.powi(self.step);
        let c2 = 1.0 - BETA2.powi(self.step);
        let flat = grads.iter().flat_map(|g| g.weights.iter().chain(g.bias.iter()));
        for (((p, &g), m), v) in model.parameters_mut().zip(flat).zip(&mut self.m).zip(&mut self.v) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            // Weights of dead units decay geometrically under the L2 term and
            // would otherwise settle at subnormal values, which slow every
            // later matrix product by an order of magnitude.
            for x in [p, m, v] {
                if x.abs() < f64::MIN_POSITIVE {
                    *x = 0.0;
                }
            }
        }
    }
}

/// Fits an MLP by mini-batch Adam on squared error. The reported losses are
/// the mean batch objective of each epoch.
pub fn train_mlp(ds: &Dataset, cfg: &MlpConfig, seed: u64) -> Result<Trained<MlpModel>> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Training("cannot train on an empty dataset".into()));
    }
    let mut model = MlpModel::init(ds.dim(), &cfg.hidden, seed);
    let (mean, scale) = feature_statistics(ds);
    model.mean = mean;
    model.scale = scale;
    let params = model.parameters_mut().count();
    let mut adam = Adam::new(params);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut buf = vec![0.0f32; ds.dim()];
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(seed, &[tag::TRAIN, epoch as u64]));
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let x = gather(ds, batch.iter().copied(), &mut buf);
            let y: Vec<f64> = batch.iter().map(|&i| ds.labels()[i]).collect();
            let (loss, grads) = model.loss_and_gradient(x.view(), &y, cfg.l2, cfg.mode);
            if !loss.is_finite() {
                return Err(Error::Training(format!("MLP loss diverged in epoch {}", epoch + 1)));
            }
            adam.apply(&mut model, &grads, cfg.learning_rate);
            total += loss;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    if model.parameters_mut().any(|p| !p.is_finite()) {
        return Err(Error::Training("MLP parameters became non-finite".into()));
    }
    Ok(Trained { model, losses })
}
