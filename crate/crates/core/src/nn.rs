//! Small dense networks with hand-written backpropagation and Adam.
//!
//! Parameters are laid out layer by layer, each layer as its row-major
//! weight matrix (`out × in`) followed by its bias. [`DenseNet::params`],
//! [`Gradients::flat`] and [`AdamState`] all use this order.

use rand::distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("bad layer dimensions {0:?}")]
    BadDims(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation; relu'(0) = 0.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            *zo += row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>();
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer gradients, same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.bias) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

impl DenseNet {
    /// Builds a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NnError> {
        let dims: Vec<usize> = layers.iter().map(|l| l.in_dim).chain(layers.last().map(|l| l.out_dim)).collect();
        if layers.is_empty() {
            return Err(NnError::BadDims(dims));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(NnError::BadDims(dims));
            }
        }
        for l in &layers {
            if l.in_dim == 0 || l.out_dim == 0 || l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(NnError::BadDims(dims));
            }
        }
        Ok(DenseNet { layers })
    }

    /// Glorot-uniform weights, zero biases, relu hidden layers and an
    /// identity output layer.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::BadDims(dims.to_vec()));
        }
        let mut rng = rng_from_seed(seed);
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-limit, limit).expect("finite glorot bound");
                let activation = if k == last { Activation::Identity } else { Activation::Relu };
                let mut layer = Layer::zeros(fan_in, fan_out, activation);
                layer.weights.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
                layer
            })
            .collect();
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// `[input, hidden..., output]`.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.out_dim)).collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::DimMismatch { expected: self.param_count(), got: flat.len() });
        }
        let mut rest = flat;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<(), NnError> {
        if x.len() != self.input_dim() {
            return Err(NnError::DimMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.pre_activation(&h).into_iter().map(|z| l.activation.apply(z)).collect();
        }
        Ok(h)
    }

    /// Gradient of `grad_out · forward(x)` with respect to every parameter.
    pub fn backward(&self, x: &[f64], grad_out: &[f64]) -> Result<Gradients, NnError> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_into(x, grad_out, &mut grads)?;
        Ok(grads)
    }

    /// Like [`DenseNet::backward`] but accumulates into `grads`.
    pub fn backward_into(&self, x: &[f64], grad_out: &[f64], grads: &mut Gradients) -> Result<(), NnError> {
        self.check_input(x)?;
        if grad_out.len() != self.output_dim() {
            return Err(NnError::DimMismatch { expected: self.output_dim(), got: grad_out.len() });
        }
        // Forward pass keeping each layer's input and pre-activation.
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut pres: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let z = l.pre_activation(&h);
            let next = z.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(std::mem::replace(&mut h, next));
            pres.push(z);
        }

        let mut upstream = grad_out.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let delta: Vec<f64> = upstream
                .iter()
                .zip(&pres[k])
                .map(|(g, &z)| g * l.activation.derivative(z))
                .collect();
            let input = &inputs[k];
            let gw = &mut grads.weights[k];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grads.bias[k][o] += d;
                let row = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                for (g, &xi) in row.iter_mut().zip(input) {
                    *g += d * xi;
                }
            }
            if k > 0 {
                let mut next = vec![0.0; l.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                    for (n, &w) in next.iter_mut().zip(row) {
                        *n += d * w;
                    }
                }
                upstream = next;
            }
        }
        Ok(())
    }

    /// Applies `θ ← θ − lr·g` in place.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            for (w, g) in l.weights.iter_mut().zip(&grads.weights[k]) {
                *w -= lr * g;
            }
            for (b, g) in l.bias.iter_mut().zip(&grads.bias[k]) {
                *b -= lr * g;
            }
        }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moment accumulators for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<(), NnError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NnError::DimMismatch { expected: self.m.len(), got: params.len().min(grads.len()) });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Convenience wrapper applying one Adam step to a network.
pub fn adam_step(net: &mut DenseNet, grads: &Gradients, state: &mut AdamState, lr: f64) -> Result<(), NnError> {
    let mut params = net.params();
    state.step(&mut params, &grads.flat(), lr)?;
    net.set_params(&params)
}
