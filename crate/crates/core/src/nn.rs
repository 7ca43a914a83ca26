//! Dense layers and layer stacks with hand-written backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }
}

/// Affine map `x -> x W + b`. `weights` is row-major with shape `inputs x outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `±1/sqrt(inputs)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = || (rng.random::<f64>() * 2.0 - 1.0) * bound;
        let weights = (0..inputs * outputs).map(|_| draw()).collect();
        let bias = (0..outputs).map(|_| draw()).collect();
        Self {
            inputs,
            outputs,
            weights,
            bias,
        }
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.outputs + j]
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.inputs);
        let mut y = self.bias.clone();
        for (xi, row) in x.iter().zip(self.weights.chunks_exact(self.outputs)) {
            if *xi == 0.0 {
                continue;
            }
            for (yj, w) in y.iter_mut().zip(row) {
                *yj += xi * w;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut DenseGrad) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for (i, (row, grow)) in self
            .weights
            .chunks_exact(self.outputs)
            .zip(grad.weights.chunks_exact_mut(self.outputs))
            .enumerate()
        {
            let xi = x[i];
            let mut acc = 0.0;
            for j in 0..self.outputs {
                grow[j] += xi * dy[j];
                acc += row[j] * dy[j];
            }
            dx[i] = acc;
        }
        for (gb, d) in grad.bias.iter_mut().zip(dy) {
            *gb += d;
        }
        dx
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.inputs == other.inputs && self.outputs == other.outputs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: vec![0.0; layer.weights.len()],
            bias: vec![0.0; layer.bias.len()],
        }
    }
}

/// A chain of dense layers with a shared hidden activation.
///
/// The activation follows every layer except possibly the last, controlled by
/// `activate_output`. An empty stack is the identity on `input_dim` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stack {
    pub input_dim: usize,
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub activate_output: bool,
}

/// Intermediate values of one forward pass, needed for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Stack {
    /// Layer widths `input_dim -> widths[0] -> ... -> widths[last]`.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        widths: &[usize],
        activation: Activation,
        activate_output: bool,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input_dim;
        for &w in widths {
            layers.push(Dense::init(fan_in, w, rng));
            fan_in = w;
        }
        Self {
            input_dim,
            layers,
            activation,
            activate_output,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.outputs)
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.activate_output
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            a = layer.forward(&a);
            if self.activated(l) {
                a.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
        }
        a
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&a);
            let next = if self.activated(l) {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Trace {
            inputs,
            pre,
            output: a,
        }
    }

    /// Backpropagates `d_out = dL/d(output)`, accumulating into `grads`. Returns `dL/dx`.
    pub fn backward(&self, trace: &Trace, d_out: &[f64], grads: &mut StackGrad) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            if self.activated(l) {
                for (d, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                    *d *= self.activation.derivative(z);
                }
            }
            delta = self.layers[l].backward(&trace.inputs[l], &delta, &mut grads.layers[l]);
        }
        delta
    }

    pub fn zero_grad(&self) -> StackGrad {
        StackGrad {
            layers: self.layers.iter().map(DenseGrad::zeros_like).collect(),
        }
    }

    /// `theta -= lr * grad`.
    pub fn sgd_step(&mut self, grads: &StackGrad, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            sgd(&mut layer.weights, &g.weights, lr);
            sgd(&mut layer.bias, &g.bias, lr);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }

    pub fn check_same_shape(&self, other: &Stack) -> Result<()> {
        check_dim(self.input_dim, other.input_dim)?;
        check_dim(self.layers.len(), other.layers.len())?;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if !a.same_shape(b) {
                return Err(Error::DimensionMismatch {
                    expected: a.inputs * a.outputs,
                    actual: b.inputs * b.outputs,
                });
            }
        }
        Ok(())
    }

    /// Iterates over every parameter, weights then bias, layer by layer.
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
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackGrad {
    pub layers: Vec<DenseGrad>,
}

impl StackGrad {
    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|g| *g *= factor);
        }
    }
}

pub(crate) fn sgd(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}
