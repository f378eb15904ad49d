//! The trainable classification head: fully connected layers with optional
//! batch normalisation, ReLU and dropout, then a softmax output layer.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::backbone::dot;
use crate::rng;
use crate::{Error, Result};

pub const MAX_HIDDEN_LAYERS: usize = 3;
pub const NODE_RANGE: (usize, usize) = (64, 2048);
pub const MAX_DROPOUT: f64 = 0.75;

const BN_EPSILON: f32 = 1e-3;
const BN_MOMENTUM: f32 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub hidden_layers: usize,
    pub nodes_per_layer: Vec<usize>,
    /// Applied after each hidden layer's activation.
    pub dropout: f64,
    pub batch_norm: bool,
    /// Pool backbone features globally before the head.
    pub global_average_pooling: bool,
    pub output_classes: usize,
}

impl HeadConfig {
    pub fn new(nodes_per_layer: Vec<usize>, dropout: f64, output_classes: usize) -> Self {
        HeadConfig {
            hidden_layers: nodes_per_layer.len(),
            nodes_per_layer,
            dropout,
            batch_norm: false,
            global_average_pooling: true,
            output_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.hidden_layers > MAX_HIDDEN_LAYERS {
            return bad(format!("hidden_layers {} exceeds {MAX_HIDDEN_LAYERS}", self.hidden_layers));
        }
        if self.nodes_per_layer.len() != self.hidden_layers {
            return bad(format!(
                "nodes_per_layer has {} entries for {} hidden layers",
                self.nodes_per_layer.len(),
                self.hidden_layers
            ));
        }
        if let Some(n) = self.nodes_per_layer.iter().find(|n| !(NODE_RANGE.0..=NODE_RANGE.1).contains(*n)) {
            return bad(format!("layer width {n} outside [{}, {}]", NODE_RANGE.0, NODE_RANGE.1));
        }
        if !(0.0..=MAX_DROPOUT).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, {MAX_DROPOUT}]", self.dropout));
        }
        if self.output_classes < 2 {
            return bad(format!("output_classes {} must be at least 2", self.output_classes));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Dense {
    fn glorot(input: usize, output: usize, r: &mut rng::Rng) -> Self {
        let limit = libm::sqrtf(6.0 / (input + output) as f32);
        Dense {
            input,
            output,
            weight: (0..input * output).map(|_| r.random_range(-limit..limit)).collect(),
            bias: vec![0.0; output],
        }
    }

    fn forward(&self, x: &[f32], batch: usize) -> Vec<f32> {
        let mut z = vec![0.0f32; batch * self.output];
        for b in 0..batch {
            let xb = &x[b * self.input..(b + 1) * self.input];
            let zb = &mut z[b * self.output..(b + 1) * self.output];
            for (o, w) in self.weight.chunks_exact(self.input).enumerate() {
                zb[o] = dot(w, xb) + self.bias[o];
            }
        }
        z
    }

    // Accumulates weight/bias gradients; returns the input gradient if asked.
    fn backward(&self, x: &[f32], dz: &[f32], batch: usize, dw: &mut [f32], db: &mut [f32], want_dx: bool) -> Vec<f32> {
        let mut dx = if want_dx { vec![0.0f32; batch * self.input] } else { Vec::new() };
        for b in 0..batch {
            let xb = &x[b * self.input..(b + 1) * self.input];
            for o in 0..self.output {
                let g = dz[b * self.output + o];
                if g == 0.0 {
                    continue;
                }
                db[o] += g;
                let row = &mut dw[o * self.input..(o + 1) * self.input];
                for (d, &xv) in row.iter_mut().zip(xb) {
                    *d += g * xv;
                }
                if want_dx {
                    let w = &self.weight[o * self.input..(o + 1) * self.input];
                    for (d, &wv) in dx[b * self.input..(b + 1) * self.input].iter_mut().zip(w) {
                        *d += g * wv;
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    fn infer(&self, z: &mut [f32]) {
        let w = self.gamma.len();
        for row in z.chunks_exact_mut(w) {
            for j in 0..w {
                let inv = 1.0 / libm::sqrtf(self.running_var[j] + BN_EPSILON);
                row[j] = self.gamma[j] * (row[j] - self.running_mean[j]) * inv + self.beta[j];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Hidden {
    pub dense: Dense,
    pub bn: Option<BatchNorm>,
}

/// Head weights for a given [`HeadConfig`] and input width.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    config: HeadConfig,
    input_dim: usize,
    pub(crate) hidden: Vec<Hidden>,
    pub(crate) output: Dense,
}

/// Per-layer values kept from a training forward pass.
pub(crate) struct Trace {
    batch: usize,
    inputs: Vec<Vec<f32>>,
    xhat: Vec<Option<Vec<f32>>>,
    inv_std: Vec<Option<Vec<f32>>>,
    pre_relu: Vec<Vec<f32>>,
    drop_scale: Vec<Option<Vec<f32>>>,
    pub probs: Vec<f64>,
}

impl Head {
    pub fn new(config: HeadConfig, input_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidConfig("head input width is zero".into()));
        }
        let mut r = rng::seeded(rng::derive(seed, "head-init", ""));
        let mut width = input_dim;
        let mut hidden = Vec::with_capacity(config.hidden_layers);
        for &n in &config.nodes_per_layer {
            hidden.push(Hidden {
                dense: Dense::glorot(width, n, &mut r),
                bn: config.batch_norm.then(|| BatchNorm::new(n)),
            });
            width = n;
        }
        let output = Dense::glorot(width, config.output_classes, &mut r);
        Ok(Head { config, input_dim, hidden, output })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_classes(&self) -> usize {
        self.config.output_classes
    }

    /// Width of [`Head::penultimate`]: last hidden width, or the input width.
    pub fn penultimate_dim(&self) -> usize {
        self.hidden.last().map_or(self.input_dim, |h| h.dense.output)
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden
            .iter()
            .map(|h| {
                h.dense.weight.len() + h.dense.bias.len() + h.bn.as_ref().map_or(0, |bn| bn.gamma.len() * 2)
            })
            .sum::<usize>()
            + self.output.weight.len()
            + self.output.bias.len()
    }

    /// Inference pass over `batch` rows; returns softmax probabilities.
    pub fn predict(&self, x: &[f32], batch: usize) -> Vec<f64> {
        let (_, logits) = self.infer(x, batch);
        softmax_rows(&logits, self.config.output_classes)
    }

    /// Last hidden activations (inference mode) or the input itself.
    pub fn penultimate(&self, x: &[f32], batch: usize) -> Vec<f32> {
        self.infer(x, batch).0
    }

    fn infer(&self, x: &[f32], batch: usize) -> (Vec<f32>, Vec<f32>) {
        let mut a = x.to_vec();
        for h in &self.hidden {
            let mut z = h.dense.forward(&a, batch);
            if let Some(bn) = &h.bn {
                bn.infer(&mut z);
            }
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            a = z;
        }
        let logits = self.output.forward(&a, batch);
        (a, logits)
    }

    /// Training pass: batch statistics, running-stat updates and dropout.
    pub(crate) fn forward_train(&mut self, x: &[f32], batch: usize, dropout_rng: &mut rng::Rng) -> Trace {
        let keep = 1.0 - self.config.dropout as f32;
        let mut trace = Trace {
            batch,
            inputs: Vec::new(),
            xhat: Vec::new(),
            inv_std: Vec::new(),
            pre_relu: Vec::new(),
            drop_scale: Vec::new(),
            probs: Vec::new(),
        };
        let mut a = x.to_vec();
        for h in &mut self.hidden {
            let width = h.dense.output;
            let mut z = h.dense.forward(&a, batch);
            trace.inputs.push(a);
            if let Some(bn) = &mut h.bn {
                let (xhat, inv) = batch_normalize(&mut z, bn, batch, width);
                trace.xhat.push(Some(xhat));
                trace.inv_std.push(Some(inv));
            } else {
                trace.xhat.push(None);
                trace.inv_std.push(None);
            }
            trace.pre_relu.push(z.clone());
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            if self.config.dropout > 0.0 {
                let scale: Vec<f32> = (0..z.len())
                    .map(|_| if dropout_rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                z.iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
                trace.drop_scale.push(Some(scale));
            } else {
                trace.drop_scale.push(None);
            }
            a = z;
        }
        let logits = self.output.forward(&a, batch);
        trace.inputs.push(a);
        trace.probs = softmax_rows(&logits, self.config.output_classes);
        trace
    }

    /// Cross-entropy gradients for `labels`, in [`Head::params_mut`] order,
    /// plus the gradient with respect to the head input when `want_dx`.
    pub(crate) fn backward(&self, trace: &Trace, labels: &[usize], want_dx: bool) -> (Vec<Vec<f32>>, Vec<f32>) {
        let batch = trace.batch;
        let classes = self.config.output_classes;
        let mut dz: Vec<f32> = trace.probs.iter().map(|&p| p as f32).collect();
        for (b, &y) in labels.iter().enumerate() {
            dz[b * classes + y] -= 1.0;
        }
        let inv_b = 1.0 / batch as f32;
        dz.iter_mut().for_each(|g| *g *= inv_b);

        let mut grads_rev: Vec<Vec<f32>> = Vec::new();
        let mut dw = vec![0.0f32; self.output.weight.len()];
        let mut db = vec![0.0f32; self.output.bias.len()];
        let last_input = trace.inputs.last().expect("trace has output input");
        let need = want_dx || !self.hidden.is_empty();
        let mut da = self.output.backward(last_input, &dz, batch, &mut dw, &mut db, need);
        grads_rev.push(db);
        grads_rev.push(dw);

        for (i, h) in self.hidden.iter().enumerate().rev() {
            if let Some(scale) = &trace.drop_scale[i] {
                da.iter_mut().zip(scale).for_each(|(g, s)| *g *= s);
            }
            da.iter_mut().zip(&trace.pre_relu[i]).for_each(|(g, &z)| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            });
            if let (Some(bn), Some(xhat), Some(inv)) = (&h.bn, &trace.xhat[i], &trace.inv_std[i]) {
                let (dgamma, dbeta) = batch_norm_backward(&mut da, bn, xhat, inv, batch);
                grads_rev.push(dbeta);
                grads_rev.push(dgamma);
            }
            let mut dw = vec![0.0f32; h.dense.weight.len()];
            let mut db = vec![0.0f32; h.dense.bias.len()];
            let need = want_dx || i > 0;
            da = h.dense.backward(&trace.inputs[i], &da, batch, &mut dw, &mut db, need);
            grads_rev.push(db);
            grads_rev.push(dw);
        }
        grads_rev.reverse();
        (grads_rev, da)
    }

    /// Trainable tensors with a flag marking which receive weight decay.
    pub(crate) fn params_mut(&mut self) -> Vec<(&mut Vec<f32>, bool)> {
        let mut out: Vec<(&mut Vec<f32>, bool)> = Vec::new();
        for h in &mut self.hidden {
            out.push((&mut h.dense.weight, true));
            out.push((&mut h.dense.bias, false));
            if let Some(bn) = &mut h.bn {
                out.push((&mut bn.gamma, false));
                out.push((&mut bn.beta, false));
            }
        }
        out.push((&mut self.output.weight, true));
        out.push((&mut self.output.bias, false));
        out
    }

    pub(crate) fn tensors(&self) -> Vec<(String, Vec<usize>, &[f32])> {
        let mut out: Vec<(String, Vec<usize>, &[f32])> = Vec::new();
        for (i, h) in self.hidden.iter().enumerate() {
            out.push((format!("head.hidden{i}.weight"), vec![h.dense.output, h.dense.input], &h.dense.weight));
            out.push((format!("head.hidden{i}.bias"), vec![h.dense.output], &h.dense.bias));
            if let Some(bn) = &h.bn {
                let n = bn.gamma.len();
                out.push((format!("head.hidden{i}.bn.gamma"), vec![n], &bn.gamma));
                out.push((format!("head.hidden{i}.bn.beta"), vec![n], &bn.beta));
                out.push((format!("head.hidden{i}.bn.running_mean"), vec![n], &bn.running_mean));
                out.push((format!("head.hidden{i}.bn.running_var"), vec![n], &bn.running_var));
            }
        }
        out.push(("head.output.weight".into(), vec![self.output.output, self.output.input], &self.output.weight));
        out.push(("head.output.bias".into(), vec![self.output.output], &self.output.bias));
        out
    }

    pub(crate) fn tensors_mut(&mut self) -> Vec<(String, &mut Vec<f32>)> {
        let mut out: Vec<(String, &mut Vec<f32>)> = Vec::new();
        for (i, h) in self.hidden.iter_mut().enumerate() {
            out.push((format!("head.hidden{i}.weight"), &mut h.dense.weight));
            out.push((format!("head.hidden{i}.bias"), &mut h.dense.bias));
            if let Some(bn) = &mut h.bn {
                out.push((format!("head.hidden{i}.bn.gamma"), &mut bn.gamma));
                out.push((format!("head.hidden{i}.bn.beta"), &mut bn.beta));
                out.push((format!("head.hidden{i}.bn.running_mean"), &mut bn.running_mean));
                out.push((format!("head.hidden{i}.bn.running_var"), &mut bn.running_var));
            }
        }
        out.push(("head.output.weight".into(), &mut self.output.weight));
        out.push(("head.output.bias".into(), &mut self.output.bias));
        out
    }
}

fn batch_normalize(z: &mut [f32], bn: &mut BatchNorm, batch: usize, width: usize) -> (Vec<f32>, Vec<f32>) {
    let mut mean = vec![0.0f32; width];
    let mut var = vec![0.0f32; width];
    for row in z.chunks_exact(width) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= batch as f32);
    for row in z.chunks_exact(width) {
        for j in 0..width {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= batch as f32);
    let inv: Vec<f32> = var.iter().map(|v| 1.0 / libm::sqrtf(v + BN_EPSILON)).collect();
    let mut xhat = vec![0.0f32; z.len()];
    for (row, xr) in z.chunks_exact_mut(width).zip(xhat.chunks_exact_mut(width)) {
        for j in 0..width {
            xr[j] = (row[j] - mean[j]) * inv[j];
            row[j] = bn.gamma[j] * xr[j] + bn.beta[j];
        }
    }
    for j in 0..width {
        bn.running_mean[j] = BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * mean[j];
        bn.running_var[j] = BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * var[j];
    }
    (xhat, inv)
}

// Replaces `dy` with the pre-normalisation gradient.
fn batch_norm_backward(dy: &mut [f32], bn: &BatchNorm, xhat: &[f32], inv: &[f32], batch: usize) -> (Vec<f32>, Vec<f32>) {
    let width = bn.gamma.len();
    let mut dgamma = vec![0.0f32; width];
    let mut dbeta = vec![0.0f32; width];
    for (g, xr) in dy.chunks_exact(width).zip(xhat.chunks_exact(width)) {
        for j in 0..width {
            dgamma[j] += g[j] * xr[j];
            dbeta[j] += g[j];
        }
    }
    let n = batch as f32;
    for (g, xr) in dy.chunks_exact_mut(width).zip(xhat.chunks_exact(width)) {
        for j in 0..width {
            let dxhat = g[j] * bn.gamma[j];
            let sum_dxhat = dbeta[j] * bn.gamma[j];
            let sum_dxhat_xhat = dgamma[j] * bn.gamma[j];
            g[j] = inv[j] / n * (n * dxhat - sum_dxhat - xr[j] * sum_dxhat_xhat);
        }
    }
    (dgamma, dbeta)
}

/// Numerically stable softmax of each `classes`-wide row, in f64.
pub fn softmax_rows(logits: &[f32], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(classes) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let start = out.len();
        let mut sum = 0.0f64;
        for &v in row {
            let e = libm::exp(v as f64 - max);
            sum += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|p| *p /= sum);
    }
    out
}
