//! Dense feed-forward network with batched reverse-mode gradients.
//!
//! Layer `k` maps `a_k` (batch × dims[k]) to
//! `a_{k+1} = act_k(a_k · W_kᵀ + b_k)` with `W_k` of shape dims[k+1] × dims[k].
//! The forward pass keeps every pre-activation in a [`Trace`] so the backward
//! pass can be run against it.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    RectifiedQuadratic,
    Exponential,
    Tanh,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Linear => z,
            Activation::Relu => z.max(0.0),
            Activation::RectifiedQuadratic => rectified_quadratic(z),
            Activation::Exponential => z.exp(),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and the output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::RectifiedQuadratic => 2.0 * z.max(0.0),
            Activation::Exponential => a,
            Activation::Tanh => 1.0 - a * a,
        }
    }

    /// True when every output of the activation is `>= 0`.
    pub fn is_non_negative(self) -> bool {
        matches!(
            self,
            Activation::Relu | Activation::RectifiedQuadratic | Activation::Exponential
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
            Activation::RectifiedQuadratic => "rectified_quadratic",
            Activation::Exponential => "exponential",
            Activation::Tanh => "tanh",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "linear" => Activation::Linear,
            "relu" => Activation::Relu,
            "rectified_quadratic" | "rq" => Activation::RectifiedQuadratic,
            "exponential" | "exp" => Activation::Exponential,
            "tanh" => Activation::Tanh,
            other => return Err(Error::param(format!("unknown activation '{other}'"))),
        })
    }
}

/// `max(0, x)²`: smooth at the origin and never negative.
pub fn rectified_quadratic(x: f64) -> f64 {
    let r = x.max(0.0);
    r * r
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    biases: Array1<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Array2<f64>, biases: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(Error::Shape {
                expected: weights.nrows(),
                actual: biases.len(),
            });
        }
        if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::param("layer parameters must be finite"));
        }
        Ok(DenseLayer {
            weights,
            biases,
            activation,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn biases(&self) -> &Array1<f64> {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Values recorded by [`DenseNet::forward_batch`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input, `activations[k + 1]` the output of layer `k`.
    activations: Vec<Array2<f64>>,
    preactivations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace has an input")
    }

    pub fn output_preactivation(&self) -> &Array2<f64> {
        self.preactivations.last().expect("net has a layer")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].nrows()
    }
}

/// Parameter gradients, laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.biases.raw_dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Iterate in the same order as [`DenseNet::params`].
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.iter().collect()
    }
}

impl DenseNet {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        layer_dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        check_dims(layer_dims, activations)?;
        let layers = layer_dims
            .windows(2)
            .zip(activations)
            .map(|(d, &act)| {
                let (fan_in, fan_out) = (d[0], d[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..=limit));
                DenseLayer {
                    weights,
                    biases: Array1::zeros(fan_out),
                    activation: act,
                }
            })
            .collect();
        Ok(DenseNet { layers })
    }

    pub fn zeros(layer_dims: &[usize], activations: &[Activation]) -> Result<Self> {
        check_dims(layer_dims, activations)?;
        let layers = layer_dims
            .windows(2)
            .zip(activations)
            .map(|(d, &act)| DenseLayer {
                weights: Array2::zeros((d[1], d[0])),
                biases: Array1::zeros(d[1]),
                activation: act,
            })
            .collect();
        Ok(DenseNet { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("network needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape {
                    expected: pair[0].out_dim(),
                    actual: pair[1].in_dim(),
                });
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(DenseLayer::out_dim))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::out_dim)
    }

    pub fn output_activation(&self) -> Activation {
        self.layers.last().expect("net has a layer").activation
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Flattened parameters: per layer, row-major weights then biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
            .collect()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape {
                expected: self.param_count(),
                actual: values.len(),
            });
        }
        let mut it = values.iter().copied();
        for layer in &mut self.layers {
            for (w, v) in layer.weights.iter_mut().zip(&mut it) {
                *w = v;
            }
            for (b, v) in layer.biases.iter_mut().zip(&mut it) {
                *b = v;
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let trace = self.forward_batch(view)?;
        Ok(trace.output().row(0).to_vec())
    }

    /// Evaluate a batch (one sample per row) without keeping intermediates.
    pub fn predict_batch(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(inputs.ncols())?;
        let mut current = inputs.to_owned();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weights.t());
            z += &layer.biases;
            z.mapv_inplace(|v| layer.activation.apply(v));
            current = z;
        }
        Ok(current)
    }

    pub fn forward_batch(&self, inputs: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(inputs.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut preactivations = Vec::with_capacity(self.layers.len());
        activations.push(inputs.to_owned());
        for layer in &self.layers {
            let prev = activations.last().expect("input pushed");
            let mut z = prev.dot(&layer.weights.t());
            if !z.is_standard_layout() {
                z = z.as_standard_layout().into_owned();
            }
            z += &layer.biases;
            let a = z.mapv(|v| layer.activation.apply(v));
            preactivations.push(z);
            activations.push(a);
        }
        Ok(Trace {
            activations,
            preactivations,
        })
    }

    /// Gradients for a single input given dLoss/dOutput.
    pub fn backward(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        let view = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let trace = self.forward_batch(view)?;
        let grad = ArrayView2::from_shape((1, output_grad.len()), output_grad)
            .map_err(|e| Error::Numerical(e.to_string()))?;
        self.backward_batch(&trace, grad)
    }

    /// Sum over the batch of parameter gradients, seeded with dLoss/dOutput
    /// (post-activation) per row.
    pub fn backward_batch(&self, trace: &Trace, output_grad: ArrayView2<f64>) -> Result<Gradients> {
        self.check_seed(trace, output_grad)?;
        let last = self.layers.len() - 1;
        let act = self.layers[last].activation;
        let mut delta = output_grad.to_owned();
        ndarray::Zip::from(&mut delta)
            .and(&trace.preactivations[last])
            .and(&trace.activations[last + 1])
            .for_each(|d, &z, &a| *d *= act.derivative(z, a));
        Ok(self.backpropagate(trace, delta))
    }

    /// Like [`DenseNet::backward_batch`] but seeded with dLoss/dPreactivation of
    /// the outer layer. Losses that know a stable closed form for the outer
    /// derivative (softmax-style ratios) use this entry point.
    pub fn backward_batch_preactivation(
        &self,
        trace: &Trace,
        preactivation_grad: ArrayView2<f64>,
    ) -> Result<Gradients> {
        self.check_seed(trace, preactivation_grad)?;
        Ok(self.backpropagate(trace, preactivation_grad.to_owned()))
    }

    fn backpropagate(&self, trace: &Trace, mut delta: Array2<f64>) -> Gradients {
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        for k in (0..n).rev() {
            let layer = &self.layers[k];
            weights.push(delta.t().dot(&trace.activations[k]));
            biases.push(delta.sum_axis(Axis(0)));
            if k > 0 {
                let mut next = delta.dot(&layer.weights);
                let prev_act = self.layers[k - 1].activation;
                ndarray::Zip::from(&mut next)
                    .and(&trace.preactivations[k - 1])
                    .and(&trace.activations[k])
                    .for_each(|d, &z, &a| *d *= prev_act.derivative(z, a));
                delta = next;
            }
        }
        weights.reverse();
        biases.reverse();
        Gradients { weights, biases }
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                actual: width,
            });
        }
        Ok(())
    }

    fn check_seed(&self, trace: &Trace, seed: ArrayView2<f64>) -> Result<()> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::Shape {
                expected: self.layers.len() + 1,
                actual: trace.activations.len(),
            });
        }
        if seed.ncols() != self.output_dim() {
            return Err(Error::Shape {
                expected: self.output_dim(),
                actual: seed.ncols(),
            });
        }
        if seed.nrows() != trace.batch_size() {
            return Err(Error::Shape {
                expected: trace.batch_size(),
                actual: seed.nrows(),
            });
        }
        Ok(())
    }

    fn apply_update(&mut self, mut f: impl FnMut(usize, bool, usize, &mut f64)) {
        for (k, layer) in self.layers.iter_mut().enumerate() {
            for (i, w) in layer.weights.iter_mut().enumerate() {
                f(k, false, i, w);
            }
            for (i, b) in layer.biases.iter_mut().enumerate() {
                f(k, true, i, b);
            }
        }
    }
}

fn check_dims(layer_dims: &[usize], activations: &[Activation]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::param("need at least input and output dimensions"));
    }
    if layer_dims.contains(&0) {
        return Err(Error::param("layer dimensions must be positive"));
    }
    if activations.len() != layer_dims.len() - 1 {
        return Err(Error::Shape {
            expected: layer_dims.len() - 1,
            actual: activations.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// First-order optimizer state. Moments are allocated on the first step.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    first_moment: Option<Gradients>,
    second_moment: Option<Gradients>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    /// Adam with beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(
            OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            learning_rate,
        )
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::param("learning rate must be positive"));
        }
        if let OptimizerKind::Adam { beta1, beta2, eps } = kind {
            if !(0.0 < beta1 && beta1 < 1.0 && 0.0 < beta2 && beta2 < 1.0 && eps > 0.0) {
                return Err(Error::param(
                    "adam requires 0 < beta1 < 1, 0 < beta2 < 1 and eps > 0",
                ));
            }
        }
        Ok(Optimizer {
            kind,
            learning_rate,
            step_count: 0,
            first_moment: None,
            second_moment: None,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::param("learning rate must be positive"));
        }
        self.learning_rate = learning_rate;
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != net.layers.len()
            || grads
                .weights
                .iter()
                .zip(&net.layers)
                .any(|(g, l)| g.raw_dim() != l.weights.raw_dim())
            || grads
                .biases
                .iter()
                .zip(&net.layers)
                .any(|(g, l)| g.raw_dim() != l.biases.raw_dim())
        {
            return Err(Error::Shape {
                expected: net.param_count(),
                actual: grads.iter().count(),
            });
        }
        if !grads.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "non-finite gradient at optimizer step {}",
                self.step_count + 1
            )));
        }
        self.step_count += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                net.apply_update(|k, is_bias, i, p| {
                    let g = if is_bias {
                        grads.biases[k].as_slice().expect("contiguous")[i]
                    } else {
                        grads.weights[k].as_slice().expect("contiguous")[i]
                    };
                    *p -= lr * g;
                });
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let m = self
                    .first_moment
                    .get_or_insert_with(|| Gradients::zeros_like(net));
                let v = self
                    .second_moment
                    .get_or_insert_with(|| Gradients::zeros_like(net));
                let t = self.step_count as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for k in 0..net.layers.len() {
                    adam_update(
                        net.layers[k].weights.as_slice_mut().expect("contiguous"),
                        grads.weights[k].as_slice().expect("contiguous"),
                        m.weights[k].as_slice_mut().expect("contiguous"),
                        v.weights[k].as_slice_mut().expect("contiguous"),
                        (lr, beta1, beta2, eps, c1, c2),
                    );
                    adam_update(
                        net.layers[k].biases.as_slice_mut().expect("contiguous"),
                        grads.biases[k].as_slice().expect("contiguous"),
                        m.biases[k].as_slice_mut().expect("contiguous"),
                        v.biases[k].as_slice_mut().expect("contiguous"),
                        (lr, beta1, beta2, eps, c1, c2),
                    );
                }
            }
        }
        Ok(())
    }
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    (lr, beta1, beta2, eps, c1, c2): (f64, f64, f64, f64, f64, f64),
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
