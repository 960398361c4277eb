use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, Signal};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and the output `a`.
    #[inline]
    fn derivative<T: Scalar>(self, z: T, a: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - a * a,
            Activation::Identity => T::one(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Parse(format!("unknown activation {other:?}"))),
        }
    }
}

/// Fully connected layer `a = act(W x + b)`, `W` row-major `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
            activation,
        }
    }

    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| T::lit((2.0 * rng.uniform() - 1.0) * limit))
            .collect();
        Self {
            in_dim,
            out_dim,
            weights,
            bias: vec![T::zero(); out_dim],
            activation,
        }
    }

    fn forward_into(&self, input: &[T], pre: &mut Vec<T>, out: &mut Vec<T>) {
        pre.clear();
        out.clear();
        for (row, &b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let z = b + dot4(row, input);
            pre.push(z);
            out.push(self.activation.apply(z));
        }
    }
}

/// Dot product with four independent accumulators.
#[inline]
fn dot4<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |t, (&x, &y)| t + x * y);
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Gradients for one [`Dense`] layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// Parameter gradients, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<DenseGrad<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(net: &Autoencoder<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseGrad {
                    weights: vec![T::zero(); l.weights.len()],
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, &y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|x| *x *= alpha);
        }
    }

    /// Flat view in the same order as [`Autoencoder::flatten`].
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }
}

/// Values retained by [`Autoencoder::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    version: u64,
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    outputs: Vec<Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub reconstruction: Signal<T>,
    pub encoding: Signal<T>,
    pub cache: ForwardCache<T>,
}

/// Multilayer perceptron autoencoder `h = decoder ∘ encoder`.
///
/// The encoder ends at the narrowest hidden layer (the code). Every optimizer
/// step bumps an internal version so caches from older parameters are
/// rejected by [`backward`](Self::backward).
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder<T> {
    layers: Vec<Dense<T>>,
    code_layer: usize,
    version: u64,
}

impl<T: Scalar> Autoencoder<T> {
    /// Zero-initialized network with `layer_dims.len() - 1` layers.
    pub fn zeros(layer_dims: &[usize], activations: &[Activation]) -> Result<Self> {
        Self::build(layer_dims, activations, |i, o, a| Dense::zeros(i, o, a))
    }

    /// Glorot-uniform initialization.
    pub fn random(layer_dims: &[usize], activations: &[Activation], rng: &mut RngStream) -> Result<Self> {
        Self::build(layer_dims, activations, |i, o, a| Dense::glorot(i, o, a, rng))
    }

    /// `dim - hidden... - dim` with ReLU hidden layers, a linear code layer
    /// and identity output.
    pub fn standard(dim: usize, hidden: &[usize], rng: &mut RngStream) -> Result<Self> {
        let mut dims = vec![dim];
        dims.extend_from_slice(hidden);
        dims.push(dim);
        let mut acts = vec![Activation::Relu; hidden.len()];
        if let Some(code) = hidden.iter().min().and_then(|m| hidden.iter().position(|w| w == m)) {
            acts[code] = Activation::Identity;
        }
        acts.push(Activation::Identity);
        Self::random(&dims, &acts, rng)
    }

    pub fn from_layers(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("layers"));
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return Err(Error::DimMismatch {
                    expected: w[0].out_dim,
                    actual: w[1].in_dim,
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::invalid("layer parameter shapes disagree with its dims"));
            }
        }
        let first = layers[0].in_dim;
        let last = layers[layers.len() - 1].out_dim;
        if first != last || first == 0 {
            return Err(Error::invalid(format!(
                "autoencoder input dim {first} must equal output dim {last}"
            )));
        }
        let code_layer = code_layer_index(&layers);
        Ok(Self {
            layers,
            code_layer,
            version: 0,
        })
    }

    fn build<F>(layer_dims: &[usize], activations: &[Activation], mut make: F) -> Result<Self>
    where
        F: FnMut(usize, usize, Activation) -> Dense<T>,
    {
        if layer_dims.len() < 2 {
            return Err(Error::invalid("need at least an input and an output dim"));
        }
        if activations.len() != layer_dims.len() - 1 {
            return Err(Error::invalid(format!(
                "{} layers need {} activations, got {}",
                layer_dims.len() - 1,
                layer_dims.len() - 1,
                activations.len()
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::invalid("layer dims must be positive"));
        }
        let layers = layer_dims
            .windows(2)
            .zip(activations)
            .map(|(w, &a)| make(w[0], w[1], a))
            .collect();
        Self::from_layers(layers)
    }

    pub fn dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].in_dim)
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    /// Mutable layer access; bumps the version.
    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        self.version += 1;
        &mut self.layers
    }

    /// Index of the layer whose output is the code.
    pub fn code_layer(&self) -> usize {
        self.code_layer
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.iter_params().all(|v| v.is_finite())
    }

    pub fn iter_params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub(crate) fn iter_params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.version += 1;
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    /// All parameters, layer by layer, weights then bias.
    pub fn flatten(&self) -> Vec<T> {
        self.iter_params().copied().collect()
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::DimMismatch {
                expected: self.parameter_count(),
                actual: values.len(),
            });
        }
        self.iter_params_mut().zip(values).for_each(|(p, &v)| *p = v);
        Ok(())
    }

    pub fn forward(&self, x: &Signal<T>) -> Result<ForwardPass<T>> {
        if x.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut outputs = Vec::with_capacity(n);
        let mut current = x.as_slice().to_vec();
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.out_dim);
            let mut a = Vec::with_capacity(layer.out_dim);
            layer.forward_into(&current, &mut z, &mut a);
            inputs.push(std::mem::replace(&mut current, a.clone()));
            pre.push(z);
            outputs.push(a);
        }
        Ok(ForwardPass {
            reconstruction: Signal::from_vec_unchecked(current),
            encoding: Signal::from_vec_unchecked(outputs[self.code_layer].clone()),
            cache: ForwardCache {
                version: self.version,
                inputs,
                pre,
                outputs,
            },
        })
    }

    /// Reconstruction only.
    pub fn reconstruct(&self, x: &Signal<T>) -> Result<Signal<T>> {
        Ok(self.forward(x)?.reconstruction)
    }

    /// Code-layer output only, skipping the decoder.
    pub fn encode(&self, x: &Signal<T>) -> Result<Signal<T>> {
        if x.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        let mut current = x.as_slice().to_vec();
        let (mut z, mut a) = (Vec::new(), Vec::new());
        for layer in &self.layers[..=self.code_layer] {
            layer.forward_into(&current, &mut z, &mut a);
            std::mem::swap(&mut current, &mut a);
        }
        Ok(Signal::from_vec_unchecked(current))
    }

    /// Reverse-mode gradients of a scalar loss whose gradient with respect
    /// to the reconstruction is `grad_output`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &Signal<T>) -> Result<Gradients<T>> {
        let mut grads = Gradients::zeros_like(self);
        self.backward_accumulate(cache, grad_output, &mut grads)?;
        Ok(grads)
    }

    /// Like [`backward`](Self::backward), but adds into `acc`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache<T>,
        grad_output: &Signal<T>,
        acc: &mut Gradients<T>,
    ) -> Result<()> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                params: self.version,
            });
        }
        if grad_output.dim() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                actual: grad_output.dim(),
            });
        }
        if acc.layers.len() != self.layers.len()
            || acc.layers.iter().zip(&self.layers).any(|(g, l)| g.weights.len() != l.weights.len())
        {
            return Err(Error::invalid("gradient accumulator does not match the network"));
        }
        let mut upstream = grad_output.as_slice().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let delta: Vec<T> = upstream
                .iter()
                .zip(&cache.pre[i])
                .zip(&cache.outputs[i])
                .map(|((&g, &z), &a)| g * layer.activation.derivative(z, a))
                .collect();
            let input = &cache.inputs[i];
            let grad = &mut acc.layers[i];
            for ((row, b), &d) in grad.weights.chunks_exact_mut(layer.in_dim).zip(&mut grad.bias).zip(&delta) {
                if d != T::zero() {
                    row.iter_mut().zip(input).for_each(|(g, &x)| *g += d * x);
                    *b += d;
                }
            }
            if i > 0 {
                let mut down = vec![T::zero(); layer.in_dim];
                for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                    if d != T::zero() {
                        down.iter_mut().zip(row).for_each(|(a, &w)| *a += w * d);
                    }
                }
                upstream = down;
            }
        }
        Ok(())
    }
}

/// First hidden layer whose output width is minimal, or the only layer of
/// a single-layer network.
fn code_layer_index<T>(layers: &[Dense<T>]) -> usize {
    if layers.len() < 2 {
        return 0;
    }
    let hidden = &layers[..layers.len() - 1];
    let min = hidden.iter().map(|l| l.out_dim).min().expect("nonempty");
    hidden.iter().position(|l| l.out_dim == min).expect("present")
}
