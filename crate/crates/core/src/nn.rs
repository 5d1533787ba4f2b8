//! Dense feed-forward networks with hand-written reverse-mode gradients.
//!
//! A [`DenseNet`] is a chain of affine layers, each followed by an element-wise
//! (or, for softmax, row-wise) activation. Forward passes that need gradients
//! return a [`Trace`] holding every layer's input and output; [`DenseNet::backward`]
//! consumes a trace plus an upstream vector and accumulates parameter gradients
//! into a [`GradientTape`].
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        }
    }

    fn apply<T: Scalar>(self, v: &mut [T]) {
        match self {
            Activation::Relu => v.iter_mut().for_each(|x| *x = x.max(T::zero())),
            Activation::Tanh => v.iter_mut().for_each(|x| *x = x.tanh()),
            Activation::Sigmoid => v.iter_mut().for_each(|x| *x = sigmoid(*x)),
            Activation::Identity => {}
            Activation::Softmax => {
                let max = v.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let mut sum = T::zero();
                for x in v.iter_mut() {
                    *x = (*x - max).exp();
                    sum += *x;
                }
                v.iter_mut().for_each(|x| *x /= sum);
            }
        }
    }

    /// Turns a gradient with respect to the activation output into one with
    /// respect to the pre-activation, using only the cached output.
    fn backprop<T: Scalar>(self, out: &[T], grad: &mut [T]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for (g, &y) in grad.iter_mut().zip(out) {
                    if y <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            Activation::Tanh => {
                for (g, &y) in grad.iter_mut().zip(out) {
                    *g *= T::one() - y * y;
                }
            }
            Activation::Sigmoid => {
                for (g, &y) in grad.iter_mut().zip(out) {
                    *g *= y * (T::one() - y);
                }
            }
            Activation::Softmax => {
                // J^T u = s * (u - <s, u>)
                let inner = out.iter().zip(grad.iter()).fold(T::zero(), |a, (&s, &u)| a + s * u);
                for (g, &s) in grad.iter_mut().zip(out) {
                    *g = s * (*g - inner);
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "relu" => Activation::Relu,
            "tanh" => Activation::Tanh,
            "sigmoid" => Activation::Sigmoid,
            "softmax" => Activation::Softmax,
            "identity" => Activation::Identity,
            other => return Err(Error::parse("activation", format!("unknown activation `{other}`"))),
        })
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
    weights: Vec<T>,
    bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    /// Layer with all parameters zero.
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Layer {
            in_dim,
            out_dim,
            activation,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn from_parts(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<T>,
        bias: Vec<T>,
        activation: Activation,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::contract("layer dimensions must be positive"));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::contract(format!(
                "layer {in_dim}->{out_dim} expects {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            )));
        }
        Ok(Layer {
            in_dim,
            out_dim,
            activation,
            weights,
            bias,
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| T::lit(rng.gen_range(-limit..limit)))
            .collect();
        Layer {
            in_dim,
            out_dim,
            activation,
            weights,
            bias: vec![T::zero(); out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    fn affine(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.in_dim).zip(&self.bias).map(|(row, &b)| {
            row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi)
        }));
    }
}

/// Chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet<T> {
    layers: Vec<Layer<T>>,
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// `inputs[k]` is the input of layer `k`.
    inputs: Vec<Vec<T>>,
    output: Vec<T>,
}

impl<T: Scalar> Trace<T> {
    pub fn output(&self) -> &[T] {
        &self.output
    }

    pub fn input(&self) -> &[T] {
        &self.inputs[0]
    }

    fn layer_output(&self, k: usize) -> &[T] {
        self.inputs.get(k + 1).unwrap_or(&self.output)
    }
}

impl<T: Scalar> DenseNet<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::contract("a network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::contract(format!(
                    "layer {k} outputs {} values but layer {} expects {}",
                    pair[0].out_dim,
                    k + 1,
                    pair[1].in_dim
                )));
            }
        }
        Ok(DenseNet { layers })
    }

    /// Multi-layer perceptron with Glorot initialization. `dims` lists every
    /// width from input to output; hidden layers use `hidden`, the last layer `output`.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::contract(format!("invalid mlp dims {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Layer::glorot(w[0], w[1], if k == last { output } else { hidden }, rng))
            .collect();
        DenseNet::new(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn output_activation(&self) -> Activation {
        self.layers[self.layers.len() - 1].activation
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if !all_finite(x) {
            return Err(Error::numeric("network input", None));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            layer.activation.apply(&mut next);
            if !all_finite(&next) {
                return Err(Error::numeric("forward pass", Some(k)));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass that keeps what [`DenseNet::backward`] needs.
    pub fn forward_traced(&self, x: &[T]) -> Result<Trace<T>> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = Vec::with_capacity(layer.out_dim);
            layer.affine(&cur, &mut next);
            layer.activation.apply(&mut next);
            if !all_finite(&next) {
                return Err(Error::numeric("forward pass", Some(k)));
            }
            inputs.push(std::mem::replace(&mut cur, next));
        }
        Ok(Trace { inputs, output: cur })
    }

    fn check_trace(&self, trace: &Trace<T>, upstream: &[T]) -> Result<()> {
        let consistent = trace.inputs.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(&trace.inputs)
                .all(|(l, inp)| l.in_dim == inp.len())
            && trace.output.len() == self.output_dim();
        if !consistent {
            return Err(Error::contract("trace does not come from a forward pass of this network"));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::contract(format!(
                "upstream has dimension {}, network output is {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    fn backward_impl(&self, trace: &Trace<T>, upstream: &[T], mut tape: Option<&mut GradientTape<T>>) -> Result<Vec<T>> {
        self.check_trace(trace, upstream)?;
        if let Some(tape) = tape.as_deref() {
            if !tape.matches(self) {
                return Err(Error::contract("gradient tape shape does not match network"));
            }
        }
        let mut grad = upstream.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            layer.activation.backprop(trace.layer_output(k), &mut grad);
            let input = &trace.inputs[k];
            if let Some(tape) = tape.as_deref_mut() {
                let gw = &mut tape.weights[k];
                for (row, &g) in gw.chunks_exact_mut(layer.in_dim).zip(&grad) {
                    if g != T::zero() {
                        row.iter_mut().zip(input).for_each(|(w, &x)| *w += g * x);
                    }
                }
                tape.biases[k].iter_mut().zip(&grad).for_each(|(b, &g)| *b += g);
            }
            let mut down = vec![T::zero(); layer.in_dim];
            for (row, &g) in layer.weights.chunks_exact(layer.in_dim).zip(&grad) {
                if g != T::zero() {
                    down.iter_mut().zip(row).for_each(|(d, &w)| *d += g * w);
                }
            }
            grad = down;
        }
        if let Some(tape) = tape {
            tape.input.iter_mut().zip(&grad).for_each(|(a, &g)| *a += g);
        }
        Ok(grad)
    }

    /// Reverse pass for the scalar `upstream · output`.
    ///
    /// Accumulates parameter gradients into `tape` and returns the gradient with
    /// respect to the network input.
    pub fn backward(&self, trace: &Trace<T>, upstream: &[T], tape: &mut GradientTape<T>) -> Result<Vec<T>> {
        self.backward_impl(trace, upstream, Some(tape))
    }

    /// Input gradient of `upstream · output` without touching any parameter gradients.
    pub fn input_gradient(&self, trace: &Trace<T>, upstream: &[T]) -> Result<Vec<T>> {
        self.backward_impl(trace, upstream, None)
    }

    /// All parameters flattened, layer by layer, weights (row-major) before bias.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::contract(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
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
}

/// Gradient accumulators mirroring a [`DenseNet`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape<T> {
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    input: Vec<T>,
}

impl<T: Scalar> GradientTape<T> {
    pub fn for_net(net: &DenseNet<T>) -> Self {
        GradientTape {
            weights: net.layers.iter().map(|l| vec![T::zero(); l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
            input: vec![T::zero(); net.input_dim()],
        }
    }

    pub fn matches(&self, net: &DenseNet<T>) -> bool {
        self.weights.len() == net.layers.len()
            && self.input.len() == net.input_dim()
            && net
                .layers
                .iter()
                .zip(self.weights.iter().zip(&self.biases))
                .all(|(l, (w, b))| l.weights.len() == w.len() && l.bias.len() == b.len())
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|v| v.fill(T::zero()));
        self.input.fill(T::zero());
    }

    pub fn is_zero(&self) -> bool {
        self.flatten().iter().all(|g| *g == T::zero())
    }

    /// Accumulated input gradient across all backward calls since the last clear.
    pub fn input(&self) -> &[T] {
        &self.input
    }

    pub fn layer_weights(&self, k: usize) -> &[T] {
        &self.weights[k]
    }

    pub fn layer_weights_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.weights[k]
    }

    pub fn layer_bias(&self, k: usize) -> &[T] {
        &self.biases[k]
    }

    pub fn layer_bias_mut(&mut self, k: usize) -> &mut [T] {
        &mut self.biases[k]
    }

    /// Same ordering as [`DenseNet::params`].
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn scale(&mut self, factor: T) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
            .for_each(|g| *g *= factor);
    }
}

/// Plain gradient descent: `θ ← θ − lr·grad`, then the tape is cleared.
///
/// A tape holding any non-finite entry is rejected and the network is left untouched.
pub fn sgd_step<T: Scalar>(net: &mut DenseNet<T>, tape: &mut GradientTape<T>, lr: T) -> Result<()> {
    if !tape.matches(net) {
        return Err(Error::contract("gradient tape shape does not match network"));
    }
    if !(lr >= T::zero()) || !lr.is_finite() {
        return Err(Error::contract(format!("learning rate must be finite and nonnegative, got {lr}")));
    }
    for (k, (w, b)) in tape.weights.iter().zip(&tape.biases).enumerate() {
        if !all_finite(w) || !all_finite(b) {
            return Err(Error::numeric("sgd step refused: non-finite gradient", Some(k)));
        }
    }
    for (layer, (gw, gb)) in net.layers.iter_mut().zip(tape.weights.iter().zip(&tape.biases)) {
        layer.weights.iter_mut().zip(gw).for_each(|(p, &g)| *p -= lr * g);
        layer.bias.iter_mut().zip(gb).for_each(|(p, &g)| *p -= lr * g);
    }
    tape.clear();
    Ok(())
}

/// Gradient-reversal weight `2 / (1 + exp(−steepness·p)) − 1` at training progress `p ∈ [0, 1]`.
pub fn grl_lambda<T: Scalar>(progress: T, steepness: T) -> Result<T> {
    if !(progress >= T::zero() && progress <= T::one()) {
        return Err(Error::contract(format!("schedule progress must lie in [0, 1], got {progress}")));
    }
    let two = T::lit(2.0);
    Ok(two / (T::one() + (-steepness * progress).exp()) - T::one())
}

/// Applies a gradient reversal layer in the backward direction: the gradient
/// flowing into the representation is multiplied by `−lambda`.
pub fn reverse_gradient<T: Scalar>(grad: &mut [T], lambda: T) {
    grad.iter_mut().for_each(|g| *g = -lambda * *g);
}
