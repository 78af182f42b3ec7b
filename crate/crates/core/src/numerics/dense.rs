//! Fixed-topology dense networks with hand-written reverse mode.
//!
//! A [`DenseNetParams`] is a chain of affine layers, each followed by an
//! activation. Everything operates on row-major batches: a batch of `b`
//! input vectors of size `n` is a `b × n` slice. The single-vector entry
//! points [`net_forward`] and [`net_gradient`] are batch-of-one wrappers.
//!
//! The convolutional decoder reuses the same layers on unrolled patches, so
//! the batched path is the hot one.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg::gemm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    /// Softmax across the layer's outputs (the channel axis).
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if weight.len() != inputs * outputs || bias.len() != outputs {
            return Err(Error::Shape(format!(
                "layer {inputs}->{outputs} got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(Self {
            inputs,
            outputs,
            weight,
            bias,
            activation,
        })
    }

    /// Uniform initialization in `±1/√inputs` for weights and biases.
    pub fn init(inputs: usize, outputs: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let weight = draw(inputs * outputs);
        let bias = draw(outputs);
        Self {
            inputs,
            outputs,
            weight,
            bias,
            activation,
        }
    }

    pub fn identity(size: usize, activation: Activation) -> Self {
        let mut weight = vec![0.0; size * size];
        for i in 0..size {
            weight[i * size + i] = 1.0;
        }
        Self {
            inputs: size,
            outputs: size,
            weight,
            bias: vec![0.0; size],
            activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetParams {
    layers: Vec<DenseLayer>,
}

impl DenseNetParams {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Seeded network with `sizes[0]` inputs and one layer per following
    /// size; `activations` has one entry per layer.
    pub fn init(sizes: &[usize], activations: &[Activation], rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::InvalidArgument(
                "need n+1 sizes for n activations".into(),
            ));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(s, &a)| DenseLayer::init(s[0], s[1], a, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Zero-valued gradient buffer shaped like these parameters.
    pub fn zero_gradients(&self) -> NetGradients {
        NetGradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Flat views of every parameter tensor in a fixed order (weight, bias per layer).
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Runs a batch forward and keeps every layer's output for the backward pass.
    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<ForwardTrace> {
        if input.len() != batch * self.input_size() {
            return Err(Error::Shape(format!(
                "batch of {batch} needs {} inputs, got {}",
                batch * self.input_size(),
                input.len()
            )));
        }
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x: &[f64] = if i == 0 { input } else { outputs[i - 1].as_slice() };
            let mut y = Vec::with_capacity(batch * layer.outputs);
            for _ in 0..batch {
                y.extend_from_slice(&layer.bias);
            }
            gemm(
                false,
                true,
                batch,
                layer.inputs,
                layer.outputs,
                1.0,
                x,
                &layer.weight,
                1.0,
                &mut y,
            );
            apply_activation(layer.activation, &mut y, layer.outputs);
            outputs.push(y);
        }
        Ok(ForwardTrace {
            batch,
            input: input.to_vec(),
            outputs,
        })
    }

    /// Reverse pass for a trace produced by [`DenseNetParams::forward_batch`].
    ///
    /// Parameter gradients are accumulated into `grads` (summed over the
    /// batch); the returned vector is the gradient with respect to the input.
    pub fn backward_batch(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        grads: &mut NetGradients,
    ) -> Result<Vec<f64>> {
        let batch = trace.batch;
        if upstream.len() != batch * self.output_size() {
            return Err(Error::Shape(format!(
                "upstream gradient has {} values, expected {}",
                upstream.len(),
                batch * self.output_size()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient buffer layer count".into()));
        }
        let mut delta = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            activation_backward(layer.activation, &trace.outputs[i], &mut delta, layer.outputs);
            let x: &[f64] = if i == 0 { &trace.input } else { &trace.outputs[i - 1] };
            let g = &mut grads.layers[i];
            // dW += deltaᵀ · x
            gemm(
                true,
                false,
                layer.outputs,
                batch,
                layer.inputs,
                1.0,
                &delta,
                x,
                1.0,
                &mut g.weight,
            );
            for row in delta.chunks_exact(layer.outputs) {
                for (gb, d) in g.bias.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            let mut dx = vec![0.0; batch * layer.inputs];
            gemm(
                false,
                false,
                batch,
                layer.outputs,
                layer.inputs,
                1.0,
                &delta,
                &layer.weight,
                0.0,
                &mut dx,
            );
            delta = dx;
        }
        Ok(delta)
    }
}

/// Cached activations of one batched forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub batch: usize,
    pub input: Vec<f64>,
    /// Post-activation output of every layer.
    pub outputs: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub layers: Vec<LayerGradient>,
}

impl NetGradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= s);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}

fn apply_activation(act: Activation, y: &mut [f64], width: usize) {
    match act {
        Activation::Identity => {}
        Activation::Relu => y.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Softmax => y.chunks_exact_mut(width).for_each(softmax_in_place),
    }
}

fn activation_backward(act: Activation, out: &[f64], delta: &mut [f64], width: usize) {
    match act {
        Activation::Identity => {}
        Activation::Relu => {
            for (d, &o) in delta.iter_mut().zip(out) {
                if o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        Activation::Softmax => {
            for (d, y) in delta.chunks_exact_mut(width).zip(out.chunks_exact(width)) {
                let dot: f64 = d.iter().zip(y).map(|(a, b)| a * b).sum();
                for (di, yi) in d.iter_mut().zip(y) {
                    *di = yi * (*di - dot);
                }
            }
        }
    }
}

/// Numerically stable softmax of one vector.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn net_forward(params: &DenseNetParams, input: &[f64]) -> Result<Vec<f64>> {
    let trace = params.forward_batch(input, 1)?;
    Ok(trace.outputs.into_iter().last().unwrap_or_default())
}

/// Exact reverse-mode gradients of `upstream · net(input)`.
pub fn net_gradient(
    params: &DenseNetParams,
    input: &[f64],
    upstream: &[f64],
) -> Result<(NetGradients, Vec<f64>)> {
    let trace = params.forward_batch(input, 1)?;
    let mut grads = params.zero_gradients();
    let dx = params.backward_batch(&trace, upstream, &mut grads)?;
    Ok((grads, dx))
}
