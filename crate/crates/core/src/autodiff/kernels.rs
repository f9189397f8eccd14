//! Direct-loop kernels over HWC tensors. Zero padding everywhere.

use crate::network::{Conv2d, Dense};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::BackpropMode;

pub(crate) fn conv2d_forward<T: Scalar>(input: &Tensor<T>, conv: &Conv2d<T>, out_shape: &[usize]) -> Tensor<T> {
    let (h, w, ci) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow, co) = (out_shape[0], out_shape[1], out_shape[2]);
    let (kh, kw) = conv.kernel();
    let (stride, pad) = (conv.stride, conv.padding);
    let x = input.data();
    let wt = conv.weight.data();
    let bias = conv.bias.data();
    let mut out = vec![T::zero(); oh * ow * co];
    for oy in 0..oh {
        for ox in 0..ow {
            let acc = &mut out[(oy * ow + ox) * co..(oy * ow + ox + 1) * co];
            acc.copy_from_slice(bias);
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let base = (iy as usize * w + ix as usize) * ci;
                    let patch = &x[base..base + ci];
                    for (o, a) in acc.iter_mut().enumerate() {
                        let wbase = ((o * kh + ky) * kw + kx) * ci;
                        let wrow = &wt[wbase..wbase + ci];
                        let mut s = T::zero();
                        for (p, q) in patch.iter().zip(wrow) {
                            s += *p * *q;
                        }
                        *a += s;
                    }
                }
            }
        }
    }
    Tensor::from_parts(out_shape.to_vec(), out)
}

/// Returns `(input_grad, weight_grad, bias_grad)`; the optional parts are
/// skipped when not requested.
pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    conv: &Conv2d<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
    want_params: bool,
) -> (Option<Tensor<T>>, Option<(Tensor<T>, Tensor<T>)>) {
    let (h, w, ci) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oh, ow, co) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let (kh, kw) = conv.kernel();
    let (stride, pad) = (conv.stride, conv.padding);
    let x = input.data();
    let wt = conv.weight.data();
    let g = grad_out.data();
    let mut gin = want_input.then(|| vec![T::zero(); x.len()]);
    let mut gw = want_params.then(|| vec![T::zero(); wt.len()]);
    let mut gb = want_params.then(|| vec![T::zero(); co]);
    for oy in 0..oh {
        for ox in 0..ow {
            let gpix = &g[(oy * ow + ox) * co..(oy * ow + ox + 1) * co];
            if let Some(gb) = gb.as_mut() {
                for (b, &v) in gb.iter_mut().zip(gpix) {
                    *b += v;
                }
            }
            for ky in 0..kh {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kw {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let base = (iy as usize * w + ix as usize) * ci;
                    for (o, &go) in gpix.iter().enumerate() {
                        if go == T::zero() {
                            continue;
                        }
                        let wbase = ((o * kh + ky) * kw + kx) * ci;
                        if let Some(gin) = gin.as_mut() {
                            for (d, &wv) in gin[base..base + ci].iter_mut().zip(&wt[wbase..wbase + ci]) {
                                *d += go * wv;
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            for (d, &xv) in gw[wbase..wbase + ci].iter_mut().zip(&x[base..base + ci]) {
                                *d += go * xv;
                            }
                        }
                    }
                }
            }
        }
    }
    let gin = gin.map(|d| Tensor::from_parts(input.shape().to_vec(), d));
    let params = gw.zip(gb).map(|(gw, gb)| {
        (
            Tensor::from_parts(conv.weight.shape().to_vec(), gw),
            Tensor::from_parts(vec![co], gb),
        )
    });
    (gin, params)
}

pub(crate) fn dense_forward<T: Scalar>(input: &Tensor<T>, dense: &Dense<T>) -> Tensor<T> {
    let ws = dense.weight.shape();
    let (outs, ins) = (ws[0], ws[1]);
    let x = input.data();
    let wt = dense.weight.data();
    let out = (0..outs)
        .map(|o| {
            let row = &wt[o * ins..(o + 1) * ins];
            dense.bias.data()[o] + row.iter().zip(x).map(|(&a, &b)| a * b).sum::<T>()
        })
        .collect();
    Tensor::from_parts(vec![outs], out)
}

pub(crate) fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    dense: &Dense<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
    want_params: bool,
) -> (Option<Tensor<T>>, Option<(Tensor<T>, Tensor<T>)>) {
    let ws = dense.weight.shape();
    let (outs, ins) = (ws[0], ws[1]);
    let x = input.data();
    let wt = dense.weight.data();
    let g = grad_out.data();
    let gin = want_input.then(|| {
        let mut d = vec![T::zero(); ins];
        for (o, &go) in g.iter().enumerate() {
            for (acc, &wv) in d.iter_mut().zip(&wt[o * ins..(o + 1) * ins]) {
                *acc += go * wv;
            }
        }
        Tensor::from_parts(input.shape().to_vec(), d)
    });
    let params = want_params.then(|| {
        let mut gw = vec![T::zero(); outs * ins];
        for (o, &go) in g.iter().enumerate() {
            for (acc, &xv) in gw[o * ins..(o + 1) * ins].iter_mut().zip(x) {
                *acc = go * xv;
            }
        }
        (
            Tensor::from_parts(ws.to_vec(), gw),
            Tensor::from_parts(vec![outs], g.to_vec()),
        )
    });
    (gin, params)
}

pub(crate) fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU backward under the selected rule; `pre` is the ReLU's input.
pub(crate) fn relu_backward<T: Scalar>(pre: &Tensor<T>, grad_out: &Tensor<T>, mode: BackpropMode) -> Tensor<T> {
    let zero = T::zero();
    let data = pre
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&a, &g)| match mode {
            BackpropMode::Standard => {
                if a > zero {
                    g
                } else {
                    zero
                }
            }
            BackpropMode::Deconv => {
                if g < zero {
                    zero
                } else {
                    g
                }
            }
            BackpropMode::Guided => {
                if a <= zero || g < zero {
                    zero
                } else {
                    g
                }
            }
        })
        .collect();
    Tensor::from_parts(pre.shape().to_vec(), data)
}

/// Position (flat offset into `input`) of each pooled maximum; ties go to
/// the first element in row-major window order.
fn max_pool_argmax<T: Scalar>(input: &Tensor<T>, size: usize, stride: usize, out_shape: &[usize]) -> Vec<usize> {
    let (w, c) = (input.shape()[1], input.shape()[2]);
    let (oh, ow) = (out_shape[0], out_shape[1]);
    let x = input.data();
    let mut idx = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = (oy * stride * w + ox * stride) * c + ch;
                for ky in 0..size {
                    for kx in 0..size {
                        let at = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                        if x[at] > x[best] {
                            best = at;
                        }
                    }
                }
                idx.push(best);
            }
        }
    }
    idx
}

pub(crate) fn max_pool_forward<T: Scalar>(input: &Tensor<T>, size: usize, stride: usize, out_shape: &[usize]) -> Tensor<T> {
    let x = input.data();
    let data = max_pool_argmax(input, size, stride, out_shape)
        .into_iter()
        .map(|i| x[i])
        .collect();
    Tensor::from_parts(out_shape.to_vec(), data)
}

pub(crate) fn max_pool_backward<T: Scalar>(input: &Tensor<T>, size: usize, stride: usize, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut gin = vec![T::zero(); input.len()];
    for (i, &g) in max_pool_argmax(input, size, stride, grad_out.shape())
        .iter()
        .zip(grad_out.data())
    {
        gin[*i] += g;
    }
    Tensor::from_parts(input.shape().to_vec(), gin)
}

pub(crate) fn gap_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let mut out = vec![T::zero(); c];
    for px in input.data().chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    let area = T::of_usize(h * w);
    for o in &mut out {
        *o /= area;
    }
    Tensor::from_parts(vec![c], out)
}

pub(crate) fn gap_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let area = T::of_usize(h * w);
    let scaled: Vec<T> = grad_out.data().iter().map(|&g| g / area).collect();
    let mut gin = Vec::with_capacity(input.len());
    for _ in 0..h * w {
        gin.extend_from_slice(&scaled);
    }
    debug_assert_eq!(gin.len(), h * w * c);
    Tensor::from_parts(input.shape().to_vec(), gin)
}

/// Numerically stable softmax over the flattened input.
pub(crate) fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vector-Jacobian product of softmax: `dz_j = p_j (g_j - sum_k g_k p_k)`.
pub(crate) fn softmax_backward<T: Scalar>(probs: &[T], grad_out: &[T]) -> Vec<T> {
    let dot: T = probs.iter().zip(grad_out).map(|(&p, &g)| p * g).sum();
    probs
        .iter()
        .zip(grad_out)
        .map(|(&p, &g)| p * (g - dot))
        .collect()
}
