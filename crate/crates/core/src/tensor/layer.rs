use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ops::{
    conv2d_backward_impl, conv2d_forward, fc_backward_impl, fc_backward_update, fc_forward, relu, relu_backward, sgd_step,
};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Valid, stride-1 convolution with square `kernel x kernel` filters.
    Conv2d { kernel: usize },
    Dense,
}

/// One affine layer with an optional trailing ReLU.
///
/// Conv kernels are `[out_c, in_c, k, k]`, dense weights `[out, in]`; the bias
/// has one entry per output channel or unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S = f32> {
    pub kind: LayerKind,
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
    pub relu: bool,
}

impl<S: Scalar> Layer<S> {
    pub fn conv2d(in_channels: usize, out_channels: usize, kernel: usize, relu: bool) -> Self {
        Layer {
            kind: LayerKind::Conv2d { kernel },
            weights: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
            relu,
        }
    }

    pub fn dense(in_units: usize, out_units: usize, relu: bool) -> Self {
        Layer {
            kind: LayerKind::Dense,
            weights: Tensor::zeros(&[out_units, in_units]),
            bias: Tensor::zeros(&[out_units]),
            relu,
        }
    }

    pub fn out_size(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn fan_in(&self) -> usize {
        self.weights.shape()[1..].iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// He-scaled Gaussian weights (`std = sqrt(2 / fan_in)`), zero bias.
    pub fn he_init(&mut self, rng: &mut impl Rng) {
        let std = (2.0 / self.fan_in() as f64).sqrt();
        for w in self.weights.data_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *w = S::of(z * std);
        }
        self.bias.data_mut().fill(S::zero());
    }

    /// Affine map followed by the ReLU when enabled.
    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        let out = match self.kind {
            LayerKind::Conv2d { .. } => conv2d_forward(input, self)?,
            LayerKind::Dense => fc_forward(input, self)?,
        };
        Ok(if self.relu { relu(&out) } else { out })
    }

    pub fn cast<T: Scalar>(&self) -> Layer<T> {
        Layer {
            kind: self.kind,
            weights: self.weights.cast(),
            bias: self.bias.cast(),
            relu: self.relu,
        }
    }
}

/// Activations recorded by [`Stack::forward_traced`]; owned by the caller so
/// concurrent forwards never share mutable state.
#[derive(Clone, Debug)]
pub struct Trace<S> {
    pub(crate) inputs: Vec<Tensor<S>>,
    pub(crate) outputs: Vec<Tensor<S>>,
}

impl<S: Scalar> Trace<S> {
    pub fn output(&self) -> Option<&Tensor<S>> {
        self.outputs.last()
    }

    pub fn activation(&self, layer: usize) -> Option<&Tensor<S>> {
        self.outputs.get(layer)
    }
}

/// Per-layer `(weight, bias)` gradients matching a [`Stack`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    pub layers: Vec<(Tensor<S>, Tensor<S>)>,
}

impl<S: Scalar> Gradients<S> {
    pub fn scale(&mut self, factor: S) {
        for (w, b) in &mut self.layers {
            for v in w.data_mut().iter_mut().chain(b.data_mut()) {
                *v = *v * factor;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers.iter().all(|(w, b)| w.all_finite() && b.all_finite())
    }
}

/// An ordered chain of layers.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Stack<S = f32> {
    pub layers: Vec<Layer<S>>,
}

impl<S: Scalar> Stack<S> {
    pub fn new(layers: Vec<Layer<S>>) -> Self {
        Stack { layers }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_from(0, input)
    }

    /// Runs layers `start..` on an activation that feeds layer `start`.
    pub fn forward_from(&self, start: usize, input: &Tensor<S>) -> Result<Tensor<S>> {
        let mut layers = self.layers[start..].iter();
        let Some(first) = layers.next() else {
            return Ok(input.clone());
        };
        let mut x = first.forward(input)?;
        for layer in layers {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    pub fn forward_traced(&self, input: &Tensor<S>) -> Result<(Tensor<S>, Trace<S>)> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs: Vec<Tensor<S>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let x = outputs.last().unwrap_or(input);
            let y = layer.forward(x)?;
            inputs.push(x.clone());
            outputs.push(y);
        }
        let out = outputs.last().cloned().unwrap_or_else(|| input.clone());
        Ok((out, Trace { inputs, outputs }))
    }

    /// Backpropagates `grad_out` through the traced forward pass. The input
    /// gradient is only computed when `want_input` is set.
    pub fn backward(
        &self,
        trace: &Trace<S>,
        grad_out: &Tensor<S>,
        want_input: bool,
    ) -> Result<(Gradients<S>, Option<Tensor<S>>)> {
        if trace.inputs.len() != self.layers.len() || trace.outputs.len() != self.layers.len() {
            return Err(Error::State(format!(
                "trace holds {} cached activations for {} layers",
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                g = relu_backward(&g, &trace.outputs[idx])?;
            }
            let need_input = want_input || idx > 0;
            let input = Some(&trace.inputs[idx]);
            let (gw, gb, gi) = match layer.kind {
                LayerKind::Conv2d { .. } => {
                    let r = conv2d_backward_impl(&g, input, layer, need_input)?;
                    (r.kernels, r.bias, r.input)
                }
                LayerKind::Dense => {
                    let r = fc_backward_impl(&g, input, layer, need_input)?;
                    (r.weights, r.bias, r.input)
                }
            };
            grads.push((gw, gb));
            if let Some(gi) = gi {
                g = gi;
            }
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, if want_input { Some(g) } else { None }))
    }

    /// Backpropagates like [`Stack::backward`] and updates each layer as soon
    /// as its gradient is known: `w <- w * shrink - lr * dw`, `b <- b - lr * db`.
    /// The result equals `backward` followed by the shrink and [`Stack::sgd_step`].
    pub fn backward_update(
        &mut self,
        trace: &Trace<S>,
        grad_out: &Tensor<S>,
        want_input: bool,
        lr: S,
        shrink: S,
    ) -> Result<Option<Tensor<S>>> {
        if trace.inputs.len() != self.layers.len() || trace.outputs.len() != self.layers.len() {
            return Err(Error::State(format!(
                "trace holds {} cached activations for {} layers",
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        let mut g = grad_out.clone();
        for (idx, layer) in self.layers.iter_mut().enumerate().rev() {
            if layer.relu {
                g = relu_backward(&g, &trace.outputs[idx])?;
            }
            let need_input = want_input || idx > 0;
            let input = &trace.inputs[idx];
            let gi = match layer.kind {
                LayerKind::Conv2d { .. } => {
                    let r = conv2d_backward_impl(&g, Some(input), layer, need_input)?;
                    if shrink != S::one() {
                        layer.weights.data_mut().iter_mut().for_each(|w| *w = *w * shrink);
                    }
                    sgd_step(&mut layer.weights, &r.kernels, lr)?;
                    sgd_step(&mut layer.bias, &r.bias, lr)?;
                    r.input
                }
                LayerKind::Dense => fc_backward_update(&g, input, layer, need_input, lr, shrink)?,
            };
            if let Some(gi) = gi {
                g = gi;
            }
        }
        Ok(if want_input { Some(g) } else { None })
    }

    pub fn sgd_step(&mut self, grads: &Gradients<S>, lr: S) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::dim("Stack::sgd_step", &[self.layers.len()], &[grads.layers.len()]));
        }
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            sgd_step(&mut layer.weights, gw, lr)?;
            sgd_step(&mut layer.bias, gb, lr)?;
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> Stack<T> {
        Stack {
            layers: self.layers.iter().map(Layer::cast).collect(),
        }
    }
}
