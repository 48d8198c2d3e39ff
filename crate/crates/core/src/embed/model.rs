//! A small fully-connected per-point feature model with softplus
//! nonlinearities and exact hand-derived backpropagation.

use crate::features::FeatureSet;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

use super::descriptor::DescriptorError;

static INSTANCE_COUNTER: AtomicU64 = AtomicU64::new(1);

const ROW_CHUNK: usize = 512;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("descriptor width {got} does not match model input width {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("activation cache is stale: the model was updated after the forward pass")]
    StaleCache,
    #[error("gradient shape ({rows}, {cols}) does not match cached output ({exp_rows}, {exp_cols})")]
    GradShapeMismatch {
        rows: usize,
        cols: usize,
        exp_rows: usize,
        exp_cols: usize,
    },
    #[error("layer {layer} expects {expected} values, got {got}")]
    LayerShapeMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

/// numerically stable softplus
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-point feature map: input -> hidden layers (softplus) -> linear output.
///
/// Rows are processed independently; there is no cross-point coupling.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    input_dim: usize,
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    seed: u64,
    instance: u64,
    version: u64,
}

/// Serialized model payload (checkpoint body).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelData {
    pub input_dim: usize,
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Pre- and post-activations retained by a forward pass for the backward.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    instance: u64,
    version: u64,
    input: FeatureSet,
    pre_activations: Vec<FeatureSet>,
    activations: Vec<FeatureSet>,
}

/// Parameter gradients mirroring the model's weight and bias blocks.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ModelGrads {
    pub fn zeros_like(model: &EmbeddingModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add(&mut self, other: &ModelGrads) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            for x in w {
                *x *= s;
            }
        }
        for b in &mut self.biases {
            for x in b {
                *x *= s;
            }
        }
    }
}

impl EmbeddingModel {
    /// Seeded model with uniform ±sqrt(6/(fan_in+fan_out)) weights and zero
    /// biases.
    pub fn new(input_dim: usize, hidden_dims: &[usize], output_dim: usize, seed: u64) -> Self {
        let mut layer_dims: Vec<usize> = hidden_dims.to_vec();
        layer_dims.push(output_dim);
        let mut rng = crate::seeding::rng_labeled(seed, "model-init", 0);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut fan_in = input_dim;
        for &fan_out in &layer_dims {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
            fan_in = fan_out;
        }
        Self {
            input_dim,
            layer_dims,
            weights,
            biases,
            seed,
            instance: INSTANCE_COUNTER.fetch_add(1, Ordering::Relaxed),
            version: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("at least one layer")
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len()
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.layer_dims[layer - 1]
        }
    }

    /// Overwrites one layer's parameters (tests, checkpoint load).
    pub fn set_layer(
        &mut self,
        layer: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
    ) -> Result<(), EmbedError> {
        let expected_w = self.layer_input_dim(layer) * self.layer_dims[layer];
        if weights.len() != expected_w {
            return Err(EmbedError::LayerShapeMismatch {
                layer,
                expected: expected_w,
                got: weights.len(),
            });
        }
        if biases.len() != self.layer_dims[layer] {
            return Err(EmbedError::LayerShapeMismatch {
                layer,
                expected: self.layer_dims[layer],
                got: biases.len(),
            });
        }
        self.weights[layer] = weights;
        self.biases[layer] = biases;
        self.version += 1;
        Ok(())
    }

    pub fn to_data(&self) -> ModelData {
        ModelData {
            input_dim: self.input_dim,
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
            seed: self.seed,
        }
    }

    pub fn from_data(data: ModelData) -> Result<Self, EmbedError> {
        let mut fan_in = data.input_dim;
        for (l, &fan_out) in data.layer_dims.iter().enumerate() {
            if data.weights.get(l).map(Vec::len) != Some(fan_in * fan_out) {
                return Err(EmbedError::LayerShapeMismatch {
                    layer: l,
                    expected: fan_in * fan_out,
                    got: data.weights.get(l).map(Vec::len).unwrap_or(0),
                });
            }
            if data.biases.get(l).map(Vec::len) != Some(fan_out) {
                return Err(EmbedError::LayerShapeMismatch {
                    layer: l,
                    expected: fan_out,
                    got: data.biases.get(l).map(Vec::len).unwrap_or(0),
                });
            }
            fan_in = fan_out;
        }
        Ok(Self {
            input_dim: data.input_dim,
            layer_dims: data.layer_dims,
            weights: data.weights,
            biases: data.biases,
            seed: data.seed,
            instance: INSTANCE_COUNTER.fetch_add(1, Ordering::Relaxed),
            version: 0,
        })
    }

    /// Parameter blocks in optimizer order: layer0.weight, layer0.bias, ...
    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.num_layers() {
            names.push(format!("layer{l}.weight"));
            names.push(format!("layer{l}.bias"));
        }
        names
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for l in 0..self.num_layers() {
            sizes.push(self.weights[l].len());
            sizes.push(self.biases[l].len());
        }
        sizes
    }

    /// Runs one optimizer step over all parameter blocks and invalidates
    /// outstanding caches.
    pub fn apply_step(
        &mut self,
        state: &mut crate::optim::OptimState,
        grads: &ModelGrads,
        lr: f64,
    ) -> Result<(), crate::optim::OptimError> {
        let mut ordered_params: Vec<&mut [f64]> = Vec::with_capacity(2 * self.weights.len());
        let mut ordered_grads: Vec<&[f64]> = Vec::with_capacity(2 * grads.weights.len());
        for ((w, b), (gw, gb)) in self
            .weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .zip(grads.weights.iter().zip(&grads.biases))
        {
            ordered_params.push(w.as_mut_slice());
            ordered_params.push(b.as_mut_slice());
            ordered_grads.push(gw.as_slice());
            ordered_grads.push(gb.as_slice());
        }
        state.step(&mut ordered_params, &ordered_grads, lr)?;
        self.version += 1;
        Ok(())
    }
}

/// Deterministic forward pass; the cache retains activations for backward.
pub fn embed_forward(
    model: &EmbeddingModel,
    descriptors: &FeatureSet,
) -> Result<(FeatureSet, ActivationCache), EmbedError> {
    if descriptors.cols() != model.input_dim {
        return Err(EmbedError::WidthMismatch {
            expected: model.input_dim,
            got: descriptors.cols(),
        });
    }
    let n = descriptors.rows();
    let n_layers = model.num_layers();
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut activations = Vec::with_capacity(n_layers.saturating_sub(1));
    let mut current = descriptors.clone();
    for l in 0..n_layers {
        let in_dim = model.layer_input_dim(l);
        let out_dim = model.layer_dims[l];
        let w = &model.weights[l];
        let b = &model.biases[l];
        let mut z = FeatureSet::zeros(n, out_dim);
        z.data_mut()
            .par_chunks_mut(ROW_CHUNK * out_dim)
            .zip(current.data().par_chunks(ROW_CHUNK * in_dim))
            .for_each(|(z_chunk, x_chunk)| {
                let rows = x_chunk.len() / in_dim;
                for r in 0..rows {
                    let x = &x_chunk[r * in_dim..(r + 1) * in_dim];
                    let zr = &mut z_chunk[r * out_dim..(r + 1) * out_dim];
                    for o in 0..out_dim {
                        let wrow = &w[o * in_dim..(o + 1) * in_dim];
                        let mut acc = b[o];
                        for (wv, xv) in wrow.iter().zip(x) {
                            acc += wv * xv;
                        }
                        zr[o] = acc;
                    }
                }
            });
        pre_activations.push(z.clone());
        if l + 1 < n_layers {
            let mut a = z;
            a.data_mut().par_chunks_mut(ROW_CHUNK).for_each(|chunk| {
                for v in chunk {
                    *v = softplus(*v);
                }
            });
            activations.push(a.clone());
            current = a;
        } else {
            current = z;
        }
    }
    let cache = ActivationCache {
        instance: model.instance,
        version: model.version,
        input: descriptors.clone(),
        pre_activations,
        activations,
    };
    Ok((current, cache))
}

/// Exact parameter gradients chained with `grad_features`.
pub fn embed_backward(
    model: &EmbeddingModel,
    cache: &ActivationCache,
    grad_features: &FeatureSet,
) -> Result<ModelGrads, EmbedError> {
    if cache.instance != model.instance || cache.version != model.version {
        return Err(EmbedError::StaleCache);
    }
    let n = cache.input.rows();
    let out_dim = model.output_dim();
    if grad_features.rows() != n || grad_features.cols() != out_dim {
        return Err(EmbedError::GradShapeMismatch {
            rows: grad_features.rows(),
            cols: grad_features.cols(),
            exp_rows: n,
            exp_cols: out_dim,
        });
    }
    let n_layers = model.num_layers();
    let mut grads = ModelGrads::zeros_like(model);
    let mut delta = grad_features.clone();
    for l in (0..n_layers).rev() {
        let in_dim = model.layer_input_dim(l);
        let dim = model.layer_dims[l];
        let prev: &FeatureSet = if l == 0 {
            &cache.input
        } else {
            &cache.activations[l - 1]
        };
        // fixed-size chunks keep the floating-point reduction order
        // independent of the worker count
        let partials: Vec<(Vec<f64>, Vec<f64>)> = delta
            .data()
            .par_chunks(ROW_CHUNK * dim)
            .zip(prev.data().par_chunks(ROW_CHUNK * in_dim))
            .map(|(d_chunk, a_chunk)| {
                let rows = d_chunk.len() / dim;
                let mut gw = vec![0.0; in_dim * dim];
                let mut gb = vec![0.0; dim];
                for r in 0..rows {
                    let d = &d_chunk[r * dim..(r + 1) * dim];
                    let a = &a_chunk[r * in_dim..(r + 1) * in_dim];
                    for o in 0..dim {
                        gb[o] += d[o];
                        let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
                        for (g, av) in grow.iter_mut().zip(a) {
                            *g += d[o] * av;
                        }
                    }
                }
                (gw, gb)
            })
            .collect();
        for (gw, gb) in partials {
            for (acc, v) in grads.weights[l].iter_mut().zip(&gw) {
                *acc += v;
            }
            for (acc, v) in grads.biases[l].iter_mut().zip(&gb) {
                *acc += v;
            }
        }
        if l > 0 {
            let w = &model.weights[l];
            let z_prev = &cache.pre_activations[l - 1];
            let mut next = FeatureSet::zeros(n, in_dim);
            next.data_mut()
                .par_chunks_mut(ROW_CHUNK * in_dim)
                .zip(delta.data().par_chunks(ROW_CHUNK * dim))
                .zip(z_prev.data().par_chunks(ROW_CHUNK * in_dim))
                .for_each(|((n_chunk, d_chunk), z_chunk)| {
                    let rows = d_chunk.len() / dim;
                    for r in 0..rows {
                        let d = &d_chunk[r * dim..(r + 1) * dim];
                        let z = &z_chunk[r * in_dim..(r + 1) * in_dim];
                        let nr = &mut n_chunk[r * in_dim..(r + 1) * in_dim];
                        for o in 0..dim {
                            let wrow = &w[o * in_dim..(o + 1) * in_dim];
                            for (idx, wv) in wrow.iter().enumerate() {
                                nr[idx] += d[o] * wv;
                            }
                        }
                        for (idx, v) in nr.iter_mut().enumerate() {
                            *v *= sigmoid(z[idx]);
                        }
                    }
                });
            delta = next;
        }
    }
    Ok(grads)
}
