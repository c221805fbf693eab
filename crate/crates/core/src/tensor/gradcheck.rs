//! Central finite-difference verification of backpropagated gradients.
//!
//! The perturbed losses never touch the gemm-based kernels: the output
//! channel (or unit) touched by a parameter is recomputed with a direct
//! summation and the layers after it are re-run with direct loops.

use super::ops::softmax_cross_entropy;
use super::{LayerKind, Layer, Stack, Tensor};
use crate::error::{Error, Result};

/// Denominator floor of the relative error, so parameters with a vanishing
/// gradient are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, REL_ERROR_FLOOR)`.
    pub max_rel_error: f64,
    /// `(layer, is_bias, index)` of the worst parameter.
    pub worst: Option<(usize, bool, usize)>,
    pub checked: usize,
    /// Parameters whose perturbation flipped a ReLU; the loss is not
    /// differentiable there, so they are not compared.
    pub skipped_kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares every weight and bias gradient of `net` for one sample against
/// central differences with step `epsilon`.
pub fn gradient_check(net: &Stack<f64>, input: &Tensor<f64>, label: usize, epsilon: f64) -> Result<GradCheckReport> {
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(Error::Config(format!("gradient check epsilon {epsilon} outside [1e-6, 1e-4]")));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    let x = input.clone().reshape(&shape)?;

    let (logits, trace) = net.forward_traced(&x)?;
    let (loss, grad_logits) = softmax_cross_entropy(logits.data(), label)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    let grad_out = Tensor::from_vec(logits.shape(), grad_logits)?;
    let (grads, _) = net.backward(&trace, &grad_out, false)?;

    let base = Baseline::new(net, &x)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
    };
    for (li, layer) in net.layers.iter().enumerate() {
        let fan_in = layer.fan_in();
        let n_weights = layer.weights.len();
        for pi in 0..n_weights + layer.bias.len() {
            let (is_bias, idx) = if pi < n_weights { (false, pi) } else { (true, pi - n_weights) };
            let channel = if is_bias { idx } else { idx / fan_in };
            let probe = |delta: f64| -> Result<(f64, Vec<bool>)> {
                let nudge = Nudge { is_bias, index: idx, delta };
                let (logits, mask) = base.perturbed_logits(net, li, channel, nudge)?;
                let (loss, _) = softmax_cross_entropy(logits.data(), label)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite perturbed loss {loss}")));
                }
                Ok((loss, mask))
            };
            let (plus, mask_plus) = probe(epsilon)?;
            let (minus, mask_minus) = probe(-epsilon)?;
            if mask_plus != mask_minus {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = if is_bias {
                grads.layers[li].1.data()[idx]
            } else {
                grads.layers[li].0.data()[idx]
            };
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((li, is_bias, idx));
            }
        }
    }
    if !report.max_rel_error.is_finite() {
        return Err(Error::Numeric("non-finite gradient error".into()));
    }
    Ok(report)
}

#[derive(Clone, Copy)]
struct Nudge {
    is_bias: bool,
    index: usize,
    delta: f64,
}

/// Unperturbed pre- and post-activation values from direct loops.
struct Baseline {
    input: Tensor<f64>,
    pre: Vec<Tensor<f64>>,
    post: Vec<Tensor<f64>>,
}

impl Baseline {
    fn new(net: &Stack<f64>, x: &Tensor<f64>) -> Result<Self> {
        let (mut pre, mut post) = (Vec::new(), Vec::<Tensor<f64>>::new());
        for layer in &net.layers {
            let p = direct_affine(layer, post.last().unwrap_or(x))?;
            post.push(if layer.relu { p.map(|v| v.max(0.0)) } else { p.clone() });
            pre.push(p);
        }
        Ok(Baseline {
            input: x.clone(),
            pre,
            post,
        })
    }

    fn layer_input(&self, li: usize) -> &Tensor<f64> {
        if li == 0 {
            &self.input
        } else {
            &self.post[li - 1]
        }
    }

    /// Logits with one parameter of layer `li` nudged. Only `channel` of that
    /// layer changes, so the next layer is updated incrementally from the
    /// changed values and everything after it re-run in full. The ReLU
    /// pattern of every affected unit is returned alongside.
    fn perturbed_logits(&self, net: &Stack<f64>, li: usize, channel: usize, nudge: Nudge) -> Result<(Tensor<f64>, Vec<bool>)> {
        let layer = &net.layers[li];
        let mut mask = Vec::new();
        let fresh = recompute_channel(layer, nudge, self.layer_input(li), channel, &mut mask);
        let positions = fresh.len();
        let base_post = &self.post[li].data()[channel * positions..(channel + 1) * positions];

        let Some(next) = net.layers.get(li + 1) else {
            let mut logits = self.post[li].clone();
            logits.data_mut()[channel * positions..(channel + 1) * positions].copy_from_slice(&fresh);
            return Ok((logits, mask));
        };
        let delta: Vec<f64> = fresh.iter().zip(base_post).map(|(a, b)| a - b).collect();
        let mut pre = self.pre[li + 1].clone();
        let w = next.weights.data();
        match next.kind {
            LayerKind::Dense => {
                let fan_in = next.fan_in();
                for (u, out) in pre.data_mut().iter_mut().enumerate() {
                    let row = &w[u * fan_in + channel * positions..u * fan_in + (channel + 1) * positions];
                    *out += row.iter().zip(&delta).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            LayerKind::Conv2d { kernel: k } => {
                let &[_, c_in, h, wd] = self.post[li].shape() else {
                    return Err(Error::dim("gradient check", self.post[li].shape(), next.weights.shape()));
                };
                let (oh, ow) = (h - k + 1, wd - k + 1);
                let out = pre.data_mut();
                for o in 0..next.out_size() {
                    for i in 0..k {
                        for j in 0..k {
                            let wv = w[((o * c_in + channel) * k + i) * k + j];
                            for y in 0..oh {
                                for xx in 0..ow {
                                    out[(o * oh + y) * ow + xx] += wv * delta[(y + i) * wd + xx + j];
                                }
                            }
                        }
                    }
                }
            }
        }
        if next.relu {
            mask.extend(pre.data().iter().map(|&v| v > 0.0));
            pre = pre.map(|v| v.max(0.0));
        }
        let logits = forward_masked(net, li + 2, pre, &mut mask)?;
        Ok((logits, mask))
    }
}

/// Direct evaluation of output channel `channel` of `layer`, one parameter
/// shifted by `nudge`, on `input` (batch of one); pushes its ReLU mask.
fn recompute_channel(layer: &Layer<f64>, nudge: Nudge, input: &Tensor<f64>, channel: usize, mask: &mut Vec<bool>) -> Vec<f64> {
    let fan_in = layer.fan_in();
    let mut w = layer.weights.data()[channel * fan_in..(channel + 1) * fan_in].to_vec();
    let mut b = layer.bias.data()[channel];
    if nudge.is_bias {
        b += nudge.delta;
    } else {
        w[nudge.index - channel * fan_in] += nudge.delta;
    }
    let x = input.data();
    let mut values = match layer.kind {
        LayerKind::Dense => vec![b + w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>()],
        LayerKind::Conv2d { kernel: k } => {
            let (c_in, h, wd) = (input.shape()[1], input.shape()[2], input.shape()[3]);
            let (oh, ow) = (h - k + 1, wd - k + 1);
            let mut out = vec![b; oh * ow];
            for c in 0..c_in {
                for i in 0..k {
                    for j in 0..k {
                        let wv = w[(c * k + i) * k + j];
                        for y in 0..oh {
                            let src = &x[(c * h + y + i) * wd + j..(c * h + y + i) * wd + j + ow];
                            for (d, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                                *d += s * wv;
                            }
                        }
                    }
                }
            }
            out
        }
    };
    if layer.relu {
        for v in &mut values {
            mask.push(*v > 0.0);
            *v = v.max(0.0);
        }
    }
    values
}

fn forward_masked(net: &Stack<f64>, start: usize, mut x: Tensor<f64>, mask: &mut Vec<bool>) -> Result<Tensor<f64>> {
    for layer in net.layers.iter().skip(start) {
        x = direct_affine(layer, &x)?;
        if layer.relu {
            mask.extend(x.data().iter().map(|&v| v > 0.0));
            x = x.map(|v| v.max(0.0));
        }
    }
    Ok(x)
}

/// Loop-nest evaluation of one layer's affine map on a batch of one.
fn direct_affine(layer: &Layer<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let w = layer.weights.data();
    let bias = layer.bias.data();
    let out_n = layer.out_size();
    let fan_in = layer.fan_in();
    let out = match layer.kind {
        LayerKind::Dense => {
            if x.len() != fan_in {
                return Err(Error::dim("direct dense", x.shape(), layer.weights.shape()));
            }
            let v: Vec<f64> = (0..out_n)
                .map(|o| bias[o] + w[o * fan_in..(o + 1) * fan_in].iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>())
                .collect();
            Tensor::from_vec(&[1, out_n], v)?
        }
        LayerKind::Conv2d { kernel: k } => {
            let &[1, c_in, h, wd] = x.shape() else {
                return Err(Error::dim("direct conv", x.shape(), layer.weights.shape()));
            };
            let (oh, ow) = (h - k + 1, wd - k + 1);
            let xs = x.data();
            let mut v = vec![0.0; out_n * oh * ow];
            for o in 0..out_n {
                let plane = &mut v[o * oh * ow..(o + 1) * oh * ow];
                plane.fill(bias[o]);
                for c in 0..c_in {
                    for i in 0..k {
                        for j in 0..k {
                            let wv = w[((o * c_in + c) * k + i) * k + j];
                            for y in 0..oh {
                                let src = &xs[(c * h + y + i) * wd + j..(c * h + y + i) * wd + j + ow];
                                for (d, s) in plane[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
            Tensor::from_vec(&[1, out_n, oh, ow], v)?
        }
    };
    Ok(out)
}
