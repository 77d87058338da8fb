//! Small dense networks with exact reverse-mode gradients and an Adam optimizer.
//!
//! Weights are stored input-major (`w[i * n_out + o]`) so that a layer fed a
//! sparse one-hot vector only touches the rows of its active inputs, both in
//! the forward pass and when accumulating weight gradients.
//!
//! Checkpoints are flat JSON:
//!
//! ```text
//! {"format":"seqopt-densenet","version":1,"hidden_activation":"relu",
//!  "layers":[{"inputs":N,"outputs":M,"weights":[N*M input-major],"biases":[M]}, ...]}
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is exact.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CHECKPOINT_FORMAT: &str = "seqopt-densenet";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        Self {
            inputs,
            outputs,
            weights,
            biases: vec![0.0; outputs],
        }
    }

    pub fn weight(&self, input: usize, output: usize) -> f64 {
        self.weights[input * self.outputs + output]
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.biases.clone();
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &self.weights[i * self.outputs..(i + 1) * self.outputs];
            for (zo, &w) in z.iter_mut().zip(row) {
                *zo += xi * w;
            }
        }
        z
    }
}

/// Feed-forward network: hidden layers use `hidden`, the output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    hidden: Activation,
}

/// Per-layer inputs and pre-activations recorded by [`DenseNet::forward_trace`].
#[derive(Clone, Debug)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("trace has at least one layer")
    }
}

/// Parameter-shaped buffer: gradients, or Adam moment accumulators.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Grads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]))
                .collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|x| *x = value);
            b.iter_mut().for_each(|x| *x = value);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().for_each(|x| *x *= factor);
            b.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max_norm`. Returns the pre-clip norm.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    hidden_activation: Activation,
    layers: Vec<Layer>,
}

impl DenseNet {
    /// Seeded Glorot initialization; `sizes` lists every layer width including input and output.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|w| Layer::glorot(w[0], w[1], rng))
            .collect();
        Ok(Self { layers, hidden })
    }

    pub fn from_layers(layers: Vec<Layer>, hidden: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::Shape(format!(
                    "layer {}x{} has {} weights and {} biases",
                    l.inputs,
                    l.outputs,
                    l.weights.len(),
                    l.biases.len()
                )));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape(format!(
                    "layer output {} does not feed input {}",
                    pair[0].outputs, pair[1].inputs
                )));
            }
        }
        Ok(Self { layers, hidden })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_size())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.inputs * l.outputs + l.outputs)
            .sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_size()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&h);
            if k < last {
                z.iter_mut().for_each(|v| *v = self.hidden.apply(*v));
            }
            h = z;
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&h);
            let next = if k < last {
                z.iter().map(|&v| self.hidden.apply(v)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        Ok(Trace { inputs, pre })
    }

    /// Parameter gradients of `upstream · output` at the traced input.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<Grads> {
        let mut grads = Grads::zeros_like(self);
        self.backward_into(trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward) but adds into an existing buffer.
    pub fn backward_into(&self, trace: &Trace, upstream: &[f64], grads: &mut Grads) -> Result<()> {
        if upstream.len() != self.output_size() {
            return Err(Error::Shape(format!(
                "upstream gradient has length {}, network output is {}",
                upstream.len(),
                self.output_size()
            )));
        }
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::Shape("trace does not match network depth".into()));
        }
        let mut delta = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let x = &trace.inputs[k];
            let (gw, gb) = &mut grads.layers[k];
            for (g, d) in gb.iter_mut().zip(&delta) {
                *g += d;
            }
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &mut gw[i * layer.outputs..(i + 1) * layer.outputs];
                for (g, d) in row.iter_mut().zip(&delta) {
                    *g += xi * d;
                }
            }
            if k == 0 {
                break;
            }
            let prev_pre = &trace.pre[k - 1];
            let mut next = vec![0.0; layer.inputs];
            for (i, slot) in next.iter_mut().enumerate() {
                let row = &layer.weights[i * layer.outputs..(i + 1) * layer.outputs];
                let s: f64 = row.iter().zip(&delta).map(|(w, d)| w * d).sum();
                *slot = s * self.hidden.derivative(prev_pre[i]);
            }
            delta = next;
        }
        Ok(())
    }

    /// Visits every parameter alongside the matching entries of `other`.
    pub fn zip_params_mut(&mut self, other: &Grads, mut f: impl FnMut(&mut f64, f64)) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&other.layers) {
            for (p, &g) in layer.weights.iter_mut().zip(gw) {
                f(p, g);
            }
            for (p, &g) in layer.biases.iter_mut().zip(gb) {
                f(p, g);
            }
        }
    }

    /// Mutable references to every parameter in layer order (weights then biases).
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    pub fn write_checkpoint<W: Write>(&self, writer: W) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            hidden_activation: self.hidden,
            layers: self.layers.clone(),
        };
        serde_json::to_writer(writer, &ckpt)?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(reader: R) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_reader(reader)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Self::from_layers(ckpt.layers, ckpt.hidden_activation)
    }
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Grads,
    second: Grads,
}

impl Adam {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        Self::with_betas(net, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(net: &DenseNet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            first: Grads::zeros_like(net),
            second: Grads::zeros_like(net),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Descends along `grads` (gradients of a loss to be minimized).
    pub fn step(&mut self, net: &mut DenseNet, grads: &Grads) -> Result<()> {
        if grads.layers.len() != self.first.layers.len() {
            return Err(Error::Shape("gradient buffer does not match optimizer".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let params = net
            .layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()));
        let m = self
            .first
            .layers
            .iter_mut()
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()));
        let v = self
            .second
            .layers
            .iter_mut()
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()));
        for (((p, m), v), g) in params.zip(m).zip(v).zip(grads.iter()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::InvalidArgument("empty logit vector".into()));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("logit {bad}")));
    }
    Ok(())
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_finite(logits)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    check_finite(logits)?;
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|&z| z - lse).collect())
}

/// Draws an index with probability `softmax(logits)`.
pub fn categorical_sample<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<usize> {
    let probs = softmax(logits)?;
    Ok(sample_probs(&probs, rng))
}

/// Inverse-CDF draw from a normalized probability vector.
pub fn sample_probs<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left the cumulative sum just below 1; take the last non-zero entry.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
