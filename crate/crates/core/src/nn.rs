//! Small dense feed-forward networks with exact reverse-mode gradients and an
//! Adam optimizer. Everything is `f64` and row-major.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Starting bias of ReLU units.
pub const RELU_INITIAL_BIAS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
            Activation::Identity => z,
        }
    }

    fn initial_bias(self) -> f64 {
        match self {
            Activation::Relu => RELU_INITIAL_BIAS,
            Activation::Sigmoid | Activation::Identity => 0.0,
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One affine layer followed by an element-wise activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            inputs,
            outputs,
            activation,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Glorot-uniform weights; ReLU layers start with a small positive bias
    /// so that units begin in their active region, other layers with zero.
    pub fn init<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            inputs,
            outputs,
            activation,
            weights,
            bias: vec![activation.initial_bias(); outputs],
        }
    }

    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| {
                    let z = row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b;
                    self.activation.apply(z)
                }),
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetRepr")]
pub struct DenseNet {
    layers: Vec<Dense>,
}

#[derive(Deserialize)]
struct NetRepr {
    layers: Vec<Dense>,
}

impl TryFrom<NetRepr> for DenseNet {
    type Error = Error;

    fn try_from(repr: NetRepr) -> Result<Self> {
        DenseNet::new(repr.layers)
    }
}

/// Layer activations retained from a forward pass: `values[0]` is the
/// input, `values[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    values: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.values.last().expect("trace holds at least the input")
    }
}

impl DenseNet {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::domain("network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::domain(format!("layer {i} has a zero dimension")));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::domain(format!(
                    "layer {i} parameter shapes do not match"
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::domain(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Seeded network with the given layer widths, e.g. `[9, 28, 28, 1]`.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() != activations.len() + 1 {
            return Err(Error::domain("need one activation per layer"));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::init(w[0], w[1], act, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_size(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward_into(values.last().unwrap(), &mut out);
            values.push(out);
        }
        Ok(ForwardTrace { values })
    }

    /// Gradients of `⟨upstream, forward(x)⟩` with respect to every parameter.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<GradientTape> {
        let trace = self.forward_trace(x)?;
        let mut tape = GradientTape::zeros_like(self);
        self.backward_into(&trace, upstream, &mut tape)?;
        Ok(tape)
    }

    /// Accumulate (add) the gradients of `⟨upstream, output⟩` into `tape`.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        upstream: &[f64],
        tape: &mut GradientTape,
    ) -> Result<()> {
        if upstream.len() != self.output_size() {
            return Err(Error::domain(format!(
                "upstream gradient has {} entries, network outputs {}",
                upstream.len(),
                self.output_size()
            )));
        }
        let mut grad_out = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.values[i];
            let output = &trace.values[i + 1];
            // dL/dz
            for (g, &a) in grad_out.iter_mut().zip(output) {
                *g *= layer.activation.derivative(a);
            }
            let lg = &mut tape.layers[i];
            for (o, &gz) in grad_out.iter().enumerate() {
                if gz == 0.0 {
                    continue;
                }
                lg.bias[o] += gz;
                let row = &mut lg.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &xi) in row.iter_mut().zip(input) {
                    *w += gz * xi;
                }
            }
            if i > 0 {
                let mut grad_in = vec![0.0; layer.inputs];
                for (o, &gz) in grad_out.iter().enumerate() {
                    if gz == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gi, &w) in grad_in.iter_mut().zip(row) {
                        *gi += gz * w;
                    }
                }
                grad_out = grad_in;
            }
        }
        Ok(())
    }

    /// Parameters in a fixed order: per layer, weights then bias.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_size() {
            return Err(Error::domain(format!(
                "input has {} entries, network expects {}",
                x.len(),
                self.input_size()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients aligned one-to-one with a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape {
    pub layers: Vec<LayerGrad>,
}

impl GradientTape {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Same order as [`DenseNet::params`].
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn scale(&mut self, factor: f64) {
        self.values_mut().for_each(|g| *g *= factor);
    }

    pub fn zero(&mut self) {
        self.scale(0.0);
    }

    pub fn norm_sq(&self) -> f64 {
        self.values().map(|g| g * g).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|&g| g == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, net: &DenseNet) -> Self {
        let n = net.num_params();
        Self {
            config,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Descend along `tape`. A tape with any non-finite entry is skipped and
    /// `false` returned; the network and moments are left untouched.
    pub fn step(&mut self, net: &mut DenseNet, tape: &GradientTape) -> bool {
        if !tape.is_finite() {
            return false;
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bias1 = 1.0 - beta1.powf(self.step as f64);
        let bias2 = 1.0 - beta2.powf(self.step as f64);
        for (((p, g), m), v) in net
            .params_mut()
            .zip(tape.values())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
        true
    }
}
