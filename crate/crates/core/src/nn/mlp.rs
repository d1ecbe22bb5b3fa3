use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::Params;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Pre-activations above this are clamped before `exp`.
pub const EXP_LOGIT_CAP: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Exponential,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
            Activation::Exponential => z.min(T::of(EXP_LOGIT_CAP)).exp(),
        }
    }

    #[inline]
    fn derivative<T: Real>(self, z: T, out: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
            Activation::Exponential => {
                if z < T::of(EXP_LOGIT_CAP) {
                    out
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// One affine layer `act(x · W + b)` with `W: n_in × n_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> Dense<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} outputs",
                bias.len(),
                weight.cols()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Self {
            weight: Matrix::zeros(n_in, n_out),
            bias: vec![T::zero(); n_out],
            activation,
        }
    }

    pub fn glorot<R: Rng + ?Sized>(n_in: usize, n_out: usize, activation: Activation, rng: &mut R) -> Self {
        Self {
            weight: Matrix::glorot(n_in, n_out, rng),
            bias: vec![T::zero(); n_out],
            activation,
        }
    }

    #[inline]
    pub fn n_in(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn n_out(&self) -> usize {
        self.weight.cols()
    }
}

/// Sequential multi-layer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    layers: Vec<Dense<T>>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
///
/// When a layer ran with an additive weight shift the effective weights
/// `W + ΔW` are kept on the tape so the backward pass propagates through
/// exactly what the forward pass used.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    signature: Vec<(usize, usize, Activation)>,
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    outputs: Vec<Vec<T>>,
    shifted: Vec<Option<Matrix<T>>>,
}

impl<T: Real> Tape<T> {
    /// Input seen by layer `i`.
    pub fn layer_input(&self, i: usize) -> &[T] {
        &self.inputs[i]
    }

    /// Pre-activation of layer `i`.
    pub fn pre_activation(&self, i: usize) -> &[T] {
        &self.pre[i]
    }

    pub fn output(&self) -> &[T] {
        self.outputs.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_shifted(&self, i: usize) -> bool {
        self.shifted[i].is_some()
    }
}

/// Gradient buffers shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> MlpGrads<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.n_in(), l.n_out()))
                .collect(),
            biases: net.layers.iter().map(|l| vec![T::zero(); l.n_out()]).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(T::zero()));
        self.biases
            .iter_mut()
            .for_each(|b| b.iter_mut().for_each(|v| *v = T::zero()));
    }

    pub fn scale(&mut self, k: T) {
        for w in &mut self.weights {
            w.scale(k);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v = *v * k);
        }
    }
}

impl<T: Real> Mlp<T> {
    pub fn new(layers: Vec<Dense<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].n_out() != pair[1].n_in() {
                return Err(Error::LayerDim {
                    layer: i + 1,
                    expected: pair[0].n_out(),
                    actual: pair[1].n_in(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialised network over `dims` (`dims.len() >= 2`). Hidden layers
    /// use `hidden`, the last layer uses `output`.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output dims".into()));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Dense::glorot(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    /// All-zero network, same layout rules as [`Mlp::glorot`].
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output dims".into()));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::zeros(w[0], w[1], if i == last { output } else { hidden }))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<T>] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn weight_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weight.shape()).collect()
    }

    fn signature(&self) -> Vec<(usize, usize, Activation)> {
        self.layers
            .iter()
            .map(|l| (l.n_in(), l.n_out(), l.activation))
            .collect()
    }

    fn check_shifts(&self, shifts: &[Option<&Matrix<T>>]) -> Result<()> {
        if shifts.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "{} shift slots for {} layers",
                shifts.len(),
                self.layers.len()
            )));
        }
        for (i, (layer, shift)) in self.layers.iter().zip(shifts).enumerate() {
            if let Some(s) = shift {
                if s.shape() != layer.weight.shape() {
                    return Err(Error::Shape(format!(
                        "shift for layer {i} is {}x{}, weight is {}x{}",
                        s.rows(),
                        s.cols(),
                        layer.n_in(),
                        layer.n_out()
                    )));
                }
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::LayerDim {
                layer: 0,
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Forward pass without recording anything.
    pub fn predict(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = affine(layer, &layer.weight, &cur);
        }
        Ok(cur)
    }

    /// Forward pass with `W + ΔW` in place of `W` wherever a shift is given.
    pub fn predict_shifted(&self, shifts: &[Option<&Matrix<T>>], x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        self.check_shifts(shifts)?;
        let mut cur = x.to_vec();
        for (layer, shift) in self.layers.iter().zip(shifts) {
            cur = match shift {
                Some(d) => affine(layer, &layer.weight.add(d)?, &cur),
                None => affine(layer, &layer.weight, &cur),
            };
        }
        Ok(cur)
    }

    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, Tape<T>)> {
        let none = vec![None; self.layers.len()];
        self.forward_shifted(&none, x)
    }

    pub fn forward_shifted(
        &self,
        shifts: &[Option<&Matrix<T>>],
        x: &[T],
    ) -> Result<(Vec<T>, Tape<T>)> {
        self.check_input(x)?;
        self.check_shifts(shifts)?;
        let n = self.layers.len();
        let mut tape = Tape {
            signature: self.signature(),
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            outputs: Vec::with_capacity(n),
            shifted: Vec::with_capacity(n),
        };
        let mut cur = x.to_vec();
        for (layer, shift) in self.layers.iter().zip(shifts) {
            let effective = match shift {
                Some(d) => Some(layer.weight.add(d)?),
                None => None,
            };
            let w = effective.as_ref().unwrap_or(&layer.weight);
            let mut z = vec![T::zero(); layer.n_out()];
            w.vec_mul_into(&cur, &mut z);
            for (zi, &bi) in z.iter_mut().zip(&layer.bias) {
                *zi = *zi + bi;
            }
            let out: Vec<T> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            tape.inputs.push(std::mem::replace(&mut cur, out.clone()));
            tape.pre.push(z);
            tape.outputs.push(out);
            tape.shifted.push(effective);
        }
        Ok((cur, tape))
    }

    /// Reverse pass. Returns parameter gradients and the gradient with
    /// respect to the input. For shifted layers the weight gradient is also
    /// the gradient with respect to the shift.
    pub fn backward(&self, tape: &Tape<T>, out_grad: &[T]) -> Result<(MlpGrads<T>, Vec<T>)> {
        let mut grads = MlpGrads::zeros_like(self);
        let input_grad = self.backward_into(tape, out_grad, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// Like [`Mlp::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &self,
        tape: &Tape<T>,
        out_grad: &[T],
        grads: &mut MlpGrads<T>,
    ) -> Result<Vec<T>> {
        if tape.signature != self.signature() {
            return Err(Error::StaleTape("layer layout differs".into()));
        }
        if grads.weights.len() != self.layers.len() {
            return Err(Error::Shape("gradient buffer layout differs".into()));
        }
        if out_grad.len() != self.output_dim() {
            return Err(Error::Dim {
                expected: self.output_dim(),
                actual: out_grad.len(),
            });
        }
        let mut g = out_grad.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let delta: Vec<T> = g
                .iter()
                .zip(&tape.pre[i])
                .zip(&tape.outputs[i])
                .map(|((&gi, &z), &o)| gi * layer.activation.derivative(z, o))
                .collect();
            grads.weights[i].add_outer(&tape.inputs[i], &delta);
            for (b, &d) in grads.biases[i].iter_mut().zip(&delta) {
                *b = *b + d;
            }
            let w = tape.shifted[i].as_ref().unwrap_or(&layer.weight);
            g = (0..w.rows())
                .map(|r| super::matrix::dot(w.row(r), &delta))
                .collect();
        }
        Ok(g)
    }
}

#[inline]
fn affine<T: Real>(layer: &Dense<T>, w: &Matrix<T>, x: &[T]) -> Vec<T> {
    let mut z = vec![T::zero(); w.cols()];
    w.vec_mul_into(x, &mut z);
    z.iter_mut()
        .zip(&layer.bias)
        .for_each(|(zi, &b)| *zi = layer.activation.apply(*zi + b));
    z
}

impl<T: Real> Params<T> for Mlp<T> {
    fn blocks(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

impl<T: Real> Params<T> for MlpGrads<T> {
    fn blocks(&self) -> Vec<&[T]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }
}
