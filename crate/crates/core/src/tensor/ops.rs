use super::gemm::{gemm, MatRef};
use super::{Layer, LayerKind, Scalar, Tensor};
use crate::error::{Error, Result};

/// Gradients of a convolution with respect to its input and parameters.
#[derive(Clone, Debug)]
pub struct ConvGrads<S> {
    pub input: Option<Tensor<S>>,
    pub kernels: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Gradients of a fully-connected layer.
#[derive(Clone, Debug)]
pub struct FcGrads<S> {
    pub input: Option<Tensor<S>>,
    pub weights: Tensor<S>,
    pub bias: Tensor<S>,
}

struct ConvGeom {
    batch: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }
    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn conv_geom<S: Scalar>(input: &Tensor<S>, layer: &Layer<S>) -> Result<(ConvGeom, bool)> {
    let LayerKind::Conv2d { kernel: k } = layer.kind else {
        return Err(Error::State("conv2d op applied to a fully-connected layer".into()));
    };
    let ks = layer.weights.shape();
    let (batch, dims, batched) = match *input.shape() {
        [c, h, w] => (1, [c, h, w], false),
        [b, c, h, w] => (b, [c, h, w], true),
        _ => return Err(Error::dim("conv2d", input.shape(), ks)),
    };
    let [in_c, h, w] = dims;
    if ks[1] != in_c || h < k || w < k {
        return Err(Error::dim("conv2d", input.shape(), ks));
    }
    Ok((
        ConvGeom {
            batch,
            in_c,
            h,
            w,
            out_c: ks[0],
            k,
            oh: h - k + 1,
            ow: w - k + 1,
        },
        batched,
    ))
}

/// Samples per im2col chunk: as many as keep the column matrix near L2 size.
fn chunk_len(g: &ConvGeom) -> usize {
    (COL_FLOATS / (g.patch_len() * g.positions())).clamp(1, g.batch.max(1))
}

const COL_FLOATS: usize = 1 << 18;

/// Unfolds one `[C, H, W]` sample into columns `off..off + oh*ow` of the
/// `[C*k*k, ld]` matrix `col`.
fn im2col<S: Scalar>(g: &ConvGeom, x: &[S], col: &mut [S], ld: usize, off: usize) {
    for c in 0..g.in_c {
        for i in 0..g.k {
            for j in 0..g.k {
                let row = (c * g.k + i) * g.k + j;
                let dst = &mut col[row * ld + off..];
                for y in 0..g.oh {
                    let src = (c * g.h + y + i) * g.w + j;
                    dst[y * g.ow..(y + 1) * g.ow].copy_from_slice(&x[src..src + g.ow]);
                }
            }
        }
    }
}

fn col2im<S: Scalar>(g: &ConvGeom, col: &[S], ld: usize, off: usize, dx: &mut [S]) {
    for c in 0..g.in_c {
        for i in 0..g.k {
            for j in 0..g.k {
                let row = (c * g.k + i) * g.k + j;
                let src = &col[row * ld + off..];
                for y in 0..g.oh {
                    let dst = (c * g.h + y + i) * g.w + j;
                    for (d, &s) in dx[dst..dst + g.ow].iter_mut().zip(&src[y * g.ow..(y + 1) * g.ow]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

/// Valid, stride-1 convolution of `[C, H, W]` or `[B, C, H, W]` input.
///
/// `out[o, y, x] = bias[o] + sum_{c,i,j} input[c, y+i, x+j] * kernels[o, c, i, j]`
pub fn conv2d_forward<S: Scalar>(input: &Tensor<S>, layer: &Layer<S>) -> Result<Tensor<S>> {
    let (g, batched) = conv_geom(input, layer)?;
    let (kk, p) = (g.patch_len(), g.positions());
    let in_len = g.in_c * g.h * g.w;
    let out_len = g.out_c * p;
    let chunk = chunk_len(&g);
    let mut out = vec![S::zero(); g.batch * out_len];
    let mut col = vec![S::zero(); kk * p * chunk];
    let mut res = vec![S::zero(); g.out_c * p * chunk];
    let kernels = layer.weights.data();
    let bias = layer.bias.data();
    for b0 in (0..g.batch).step_by(chunk) {
        let nb = chunk.min(g.batch - b0);
        let ld = nb * p;
        for s in 0..nb {
            let b = b0 + s;
            im2col(&g, &input.data()[b * in_len..(b + 1) * in_len], &mut col, ld, s * p);
        }
        gemm(
            g.out_c,
            ld,
            kk,
            MatRef::row_major(kernels, kk),
            MatRef::row_major(&col, ld),
            &mut res,
            ld,
            false,
        );
        for s in 0..nb {
            let dst = &mut out[(b0 + s) * out_len..(b0 + s + 1) * out_len];
            for (o, row) in dst.chunks_exact_mut(p).enumerate() {
                let src = &res[o * ld + s * p..o * ld + (s + 1) * p];
                for (v, &r) in row.iter_mut().zip(src) {
                    *v = r + bias[o];
                }
            }
        }
    }
    let shape: Vec<usize> = if batched {
        vec![g.batch, g.out_c, g.oh, g.ow]
    } else {
        vec![g.out_c, g.oh, g.ow]
    };
    Tensor::from_vec(&shape, out)
}

/// Exact transpose of [`conv2d_forward`] given the forward input.
pub fn conv2d_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    input: Option<&Tensor<S>>,
    layer: &Layer<S>,
) -> Result<ConvGrads<S>> {
    conv2d_backward_impl(grad_out, input, layer, true)
}

pub(crate) fn conv2d_backward_impl<S: Scalar>(
    grad_out: &Tensor<S>,
    input: Option<&Tensor<S>>,
    layer: &Layer<S>,
    want_input: bool,
) -> Result<ConvGrads<S>> {
    let input = input.ok_or_else(|| Error::State("conv2d backward without a cached forward input".into()))?;
    let (g, batched) = conv_geom(input, layer)?;
    let expect: Vec<usize> = if batched {
        vec![g.batch, g.out_c, g.oh, g.ow]
    } else {
        vec![g.out_c, g.oh, g.ow]
    };
    if grad_out.shape() != expect.as_slice() {
        return Err(Error::dim("conv2d_backward", grad_out.shape(), &expect));
    }
    let (kk, p) = (g.patch_len(), g.positions());
    let in_len = g.in_c * g.h * g.w;
    let out_len = g.out_c * p;
    let chunk = chunk_len(&g);
    let mut gk = vec![S::zero(); g.out_c * kk];
    let mut gb = vec![S::zero(); g.out_c];
    let mut gx = if want_input {
        vec![S::zero(); input.len()]
    } else {
        Vec::new()
    };
    let mut col = vec![S::zero(); kk * p * chunk];
    let mut go_t = vec![S::zero(); g.out_c * p * chunk];
    let mut gcol = vec![S::zero(); if want_input { kk * p * chunk } else { 0 }];
    let kernels = layer.weights.data();
    for b0 in (0..g.batch).step_by(chunk) {
        let nb = chunk.min(g.batch - b0);
        let ld = nb * p;
        for s in 0..nb {
            let b = b0 + s;
            im2col(&g, &input.data()[b * in_len..(b + 1) * in_len], &mut col, ld, s * p);
            let go = &grad_out.data()[b * out_len..(b + 1) * out_len];
            for (o, row) in go.chunks_exact(p).enumerate() {
                go_t[o * ld + s * p..o * ld + (s + 1) * p].copy_from_slice(row);
                gb[o] = gb[o] + row.iter().copied().sum::<S>();
            }
        }
        gemm(
            g.out_c,
            kk,
            ld,
            MatRef::row_major(&go_t, ld),
            MatRef::transposed(&col, ld),
            &mut gk,
            kk,
            true,
        );
        if want_input {
            gemm(
                kk,
                ld,
                g.out_c,
                MatRef::transposed(kernels, kk),
                MatRef::row_major(&go_t, ld),
                &mut gcol,
                ld,
                false,
            );
            for s in 0..nb {
                let b = b0 + s;
                col2im(&g, &gcol, ld, s * p, &mut gx[b * in_len..(b + 1) * in_len]);
            }
        }
    }
    Ok(ConvGrads {
        input: if want_input {
            Some(Tensor::from_vec(input.shape(), gx)?)
        } else {
            None
        },
        kernels: Tensor::from_vec(layer.weights.shape(), gk)?,
        bias: Tensor::from_vec(layer.bias.shape(), gb)?,
    })
}

fn fc_geom<S: Scalar>(input: &Tensor<S>, layer: &Layer<S>) -> Result<(usize, usize, usize, bool)> {
    if layer.kind != LayerKind::Dense {
        return Err(Error::State("fully-connected op applied to a conv2d layer".into()));
    }
    let ws = layer.weights.shape();
    let (out_units, in_units) = (ws[0], ws[1]);
    // A single vector, or a batch whose per-sample part is flattened.
    let (batch, batched) = if input.len() == in_units && input.shape().len() == 1 {
        (1, false)
    } else if input.shape().len() >= 2 && input.len() == input.shape()[0] * in_units {
        (input.shape()[0], true)
    } else {
        return Err(Error::dim("fully-connected", input.shape(), ws));
    };
    Ok((batch, out_units, in_units, batched))
}

/// `out = W * input + bias`; a leading batch axis is kept, the rest flattened.
pub fn fc_forward<S: Scalar>(input: &Tensor<S>, layer: &Layer<S>) -> Result<Tensor<S>> {
    let (batch, m, n, batched) = fc_geom(input, layer)?;
    let mut out = vec![S::zero(); batch * m];
    gemm(
        batch,
        m,
        n,
        MatRef::row_major(input.data(), n),
        MatRef::transposed(layer.weights.data(), n),
        &mut out,
        m,
        false,
    );
    let bias = layer.bias.data();
    for row in out.chunks_exact_mut(m) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
    let shape: Vec<usize> = if batched { vec![batch, m] } else { vec![m] };
    Tensor::from_vec(&shape, out)
}

pub fn fc_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    input: Option<&Tensor<S>>,
    layer: &Layer<S>,
) -> Result<FcGrads<S>> {
    fc_backward_impl(grad_out, input, layer, true)
}

pub(crate) fn fc_backward_impl<S: Scalar>(
    grad_out: &Tensor<S>,
    input: Option<&Tensor<S>>,
    layer: &Layer<S>,
    want_input: bool,
) -> Result<FcGrads<S>> {
    let input = input.ok_or_else(|| Error::State("fully-connected backward without a cached forward input".into()))?;
    let (batch, m, n, _) = fc_geom(input, layer)?;
    if grad_out.len() != batch * m {
        return Err(Error::dim("fc_backward", grad_out.shape(), &[batch, m]));
    }
    let go = grad_out.data();
    let mut gw = vec![S::zero(); m * n];
    gemm(
        m,
        n,
        batch,
        MatRef::transposed(go, m),
        MatRef::row_major(input.data(), n),
        &mut gw,
        n,
        false,
    );
    let mut gb = vec![S::zero(); m];
    for row in go.chunks_exact(m) {
        for (g, &v) in gb.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
    let gx = if want_input {
        let mut gx = vec![S::zero(); batch * n];
        gemm(
            batch,
            n,
            m,
            MatRef::row_major(go, m),
            MatRef::row_major(layer.weights.data(), n),
            &mut gx,
            n,
            false,
        );
        Some(Tensor::from_vec(input.shape(), gx)?)
    } else {
        None
    };
    Ok(FcGrads {
        input: gx,
        weights: Tensor::from_vec(layer.weights.shape(), gw)?,
        bias: Tensor::from_vec(layer.bias.shape(), gb)?,
    })
}

/// Weight columns per block of [`fc_backward_update`].
const FC_UPDATE_COLS: usize = 512;

/// [`fc_backward`] fused with the update `w <- w * shrink - lr * dw`,
/// `b <- b - lr * db`. Works through `w` one column block at a time, so the
/// weight gradient is never materialized whole. Results are bit-identical to
/// the unfused backward pass followed by the same update.
pub(crate) fn fc_backward_update<S: Scalar>(
    grad_out: &Tensor<S>,
    input: &Tensor<S>,
    layer: &mut Layer<S>,
    want_input: bool,
    lr: S,
    shrink: S,
) -> Result<Option<Tensor<S>>> {
    let (batch, m, n, _) = fc_geom(input, layer)?;
    if grad_out.len() != batch * m {
        return Err(Error::dim("fc_backward", grad_out.shape(), &[batch, m]));
    }
    let go = grad_out.data();
    let x = input.data();
    let mut gx = if want_input { vec![S::zero(); batch * n] } else { Vec::new() };
    let mut gw = vec![S::zero(); m * FC_UPDATE_COLS.min(n)];
    let w = layer.weights.data_mut();
    for c0 in (0..n).step_by(FC_UPDATE_COLS) {
        let cols = FC_UPDATE_COLS.min(n - c0);
        if want_input {
            gemm(
                batch,
                cols,
                m,
                MatRef::row_major(go, m),
                MatRef {
                    data: &w[c0..],
                    rs: n,
                    cs: 1,
                },
                &mut gx[c0..],
                n,
                false,
            );
        }
        gemm(
            m,
            cols,
            batch,
            MatRef::transposed(go, m),
            MatRef {
                data: &x[c0..],
                rs: n,
                cs: 1,
            },
            &mut gw,
            cols,
            false,
        );
        for (row, grow) in w.chunks_exact_mut(n).zip(gw.chunks_exact(cols)) {
            for (v, &g) in row[c0..c0 + cols].iter_mut().zip(grow) {
                if shrink != S::one() {
                    *v = *v * shrink;
                }
                *v = *v - lr * g;
            }
        }
    }
    let mut gb = vec![S::zero(); m];
    for row in go.chunks_exact(m) {
        for (g, &v) in gb.iter_mut().zip(row) {
            *g = *g + v;
        }
    }
    for (b, &g) in layer.bias.data_mut().iter_mut().zip(&gb) {
        *b = *b - lr * g;
    }
    if want_input {
        Ok(Some(Tensor::from_vec(input.shape(), gx)?))
    } else {
        Ok(None)
    }
}

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Masks `grad_out` by `input > 0`.
pub fn relu_backward<S: Scalar>(grad_out: &Tensor<S>, input: &Tensor<S>) -> Result<Tensor<S>> {
    if grad_out.shape() != input.shape() {
        return Err(Error::dim("relu_backward", grad_out.shape(), input.shape()));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Max-subtracted softmax of one logit vector.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Returns `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy<S: Scalar>(logits: &[S], label: usize) -> Result<(S, Vec<S>)> {
    if label >= logits.len() {
        return Err(Error::Index {
            what: "class label",
            index: label,
            len: logits.len(),
        });
    }
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let shifted: Vec<S> = logits.iter().map(|&z| z - max).collect();
    let log_total = shifted.iter().map(|&z| z.exp()).sum::<S>().ln();
    let loss = log_total - shifted[label];
    let mut grad: Vec<S> = shifted.iter().map(|&z| (z - log_total).exp()).collect();
    grad[label] = grad[label] - S::one();
    Ok((loss, grad))
}

/// `w <- w - lr * g`, elementwise and in place.
pub fn sgd_step<S: Scalar>(weights: &mut Tensor<S>, grads: &Tensor<S>, lr: S) -> Result<()> {
    if weights.shape() != grads.shape() {
        return Err(Error::dim("sgd_step", weights.shape(), grads.shape()));
    }
    for (w, &g) in weights.data_mut().iter_mut().zip(grads.data()) {
        *w = *w - lr * g;
    }
    Ok(())
}
