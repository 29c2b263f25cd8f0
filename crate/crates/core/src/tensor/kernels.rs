//! Numeric kernels: convolution (cross-correlation convention, no kernel
//! flip), max pooling with argmax capture, batch normalization, and
//! activations. All loops run in a fixed order so outputs are bitwise
//! deterministic.

use super::Tensor;
use crate::error::{Error, Result};

pub fn conv_out_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::config("stride must be >= 1"));
    }
    let padded = len + 2 * padding;
    if kernel == 0 || kernel > padded {
        return Err(Error::shape(format!(
            "kernel {} exceeds padded extent {}",
            kernel, padded
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// 1D cross-correlation: input `[C_in, L]`, kernels `[C_out, C_in, K]`,
/// bias `[C_out]` -> `[C_out, L_out]`.
pub fn conv1d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    if input.rank() != 2 || kernels.rank() != 3 || bias.rank() != 1 {
        return Err(Error::shape("conv1d expects input [C,L], kernels [O,C,K], bias [O]"));
    }
    let (c_in, len) = (input.shape()[0], input.shape()[1]);
    let (c_out, kc, k) = (kernels.shape()[0], kernels.shape()[1], kernels.shape()[2]);
    if kc != c_in {
        return Err(Error::shape(format!(
            "kernel channels {} vs input channels {}",
            kc, c_in
        )));
    }
    if bias.shape()[0] != c_out {
        return Err(Error::shape("bias length vs output channels"));
    }
    let l_out = conv_out_len(len, k, stride, padding)?;
    let mut out = Tensor::zeros(&[c_out, l_out]);
    let x = input.data();
    let w = kernels.data();
    let o = out.data_mut();
    for co in 0..c_out {
        let b = bias.data()[co];
        for lo in 0..l_out {
            let mut acc = 0.0;
            for ci in 0..c_in {
                for kk in 0..k {
                    let pos = lo * stride + kk;
                    if pos < padding || pos - padding >= len {
                        continue; // zero padding
                    }
                    acc += x[ci * len + (pos - padding)] * w[(co * c_in + ci) * k + kk];
                }
            }
            o[co * l_out + lo] = acc + b;
        }
    }
    Ok(out)
}

/// 3D cross-correlation: input `[C_in, D, H, W]`, kernels
/// `[C_out, C_in, Kd, Kh, Kw]`, bias `[C_out]` -> `[C_out, D', H', W']`.
pub fn conv3d_forward(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    strides: [usize; 3],
    paddings: [usize; 3],
) -> Result<Tensor> {
    if input.rank() != 4 || kernels.rank() != 5 || bias.rank() != 1 {
        return Err(Error::shape(
            "conv3d expects input [C,D,H,W], kernels [O,C,Kd,Kh,Kw], bias [O]",
        ));
    }
    let (c_in, d, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    let c_out = kernels.shape()[0];
    if kernels.shape()[1] != c_in {
        return Err(Error::shape(format!(
            "kernel channels {} vs input channels {}",
            kernels.shape()[1],
            c_in
        )));
    }
    let (kd, kh, kw) = (kernels.shape()[2], kernels.shape()[3], kernels.shape()[4]);
    if bias.shape()[0] != c_out {
        return Err(Error::shape("bias length vs output channels"));
    }
    let d_out = conv_out_len(d, kd, strides[0], paddings[0])?;
    let h_out = conv_out_len(h, kh, strides[1], paddings[1])?;
    let w_out = conv_out_len(w, kw, strides[2], paddings[2])?;
    let mut out = Tensor::zeros(&[c_out, d_out, h_out, w_out]);
    let x = input.data();
    let ker = kernels.data();
    let o = out.data_mut();
    for co in 0..c_out {
        let b = bias.data()[co];
        for od in 0..d_out {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for zd in 0..kd {
                            let pd = od * strides[0] + zd;
                            if pd < paddings[0] || pd - paddings[0] >= d {
                                continue;
                            }
                            let id = pd - paddings[0];
                            for zh in 0..kh {
                                let ph = oh * strides[1] + zh;
                                if ph < paddings[1] || ph - paddings[1] >= h {
                                    continue;
                                }
                                let ih = ph - paddings[1];
                                for zw in 0..kw {
                                    let pw = ow * strides[2] + zw;
                                    if pw < paddings[2] || pw - paddings[2] >= w {
                                        continue;
                                    }
                                    let iw = pw - paddings[2];
                                    acc += x[((ci * d + id) * h + ih) * w + iw]
                                        * ker[(((co * c_in + ci) * kd + zd) * kh + zh) * kw + zw];
                                }
                            }
                        }
                    }
                    o[((co * d_out + od) * h_out + oh) * w_out + ow] = acc + b;
                }
            }
        }
    }
    Ok(out)
}

/// Max pooling along the last axis of `[C, L]`. Returns the pooled tensor
/// and the flat argmax index (into the input) per output element. Ties go
/// to the lowest flat index.
pub fn maxpool1d(input: &Tensor, window: usize, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    if input.rank() != 2 {
        return Err(Error::shape("maxpool1d expects [C, L]"));
    }
    if window == 0 || stride == 0 {
        return Err(Error::config("window and stride must be >= 1"));
    }
    let (c, len) = (input.shape()[0], input.shape()[1]);
    if window > len {
        return Err(Error::shape(format!("window {} exceeds extent {}", window, len)));
    }
    let l_out = (len - window) / stride + 1;
    let mut out = Tensor::zeros(&[c, l_out]);
    let mut arg = vec![0usize; c * l_out];
    let x = input.data();
    let o = out.data_mut();
    for ci in 0..c {
        for lo in 0..l_out {
            let start = lo * stride;
            let mut best = x[ci * len + start];
            let mut best_idx = ci * len + start;
            for kk in 1..window {
                let idx = ci * len + start + kk;
                if x[idx] > best {
                    best = x[idx];
                    best_idx = idx;
                }
            }
            o[ci * l_out + lo] = best;
            arg[ci * l_out + lo] = best_idx;
        }
    }
    Ok((out, arg))
}

/// Max pooling over the last two (spatial) axes of `[C, D, H, W]`,
/// per channel and depth slice.
pub fn maxpool2d_spatial(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    if input.rank() != 4 {
        return Err(Error::shape("maxpool2d_spatial expects [C, D, H, W]"));
    }
    if window == 0 || stride == 0 {
        return Err(Error::config("window and stride must be >= 1"));
    }
    let (c, d, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if window > h || window > w {
        return Err(Error::shape(format!(
            "window {} exceeds spatial extents {}x{}",
            window, h, w
        )));
    }
    let h_out = (h - window) / stride + 1;
    let w_out = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[c, d, h_out, w_out]);
    let mut arg = vec![0usize; c * d * h_out * w_out];
    let x = input.data();
    let o = out.data_mut();
    for ci in 0..c {
        for di in 0..d {
            for oh in 0..h_out {
                for ow in 0..w_out {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for zh in 0..window {
                        for zw in 0..window {
                            let idx =
                                ((ci * d + di) * h + oh * stride + zh) * w + ow * stride + zw;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let oidx = ((ci * d + di) * h_out + oh) * w_out + ow;
                    o[oidx] = best;
                    arg[oidx] = best_idx;
                }
            }
        }
    }
    Ok((out, arg))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchNormMode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `[N, C, ...]` (channel axis 1).
/// Train mode normalizes with batch statistics and updates the running
/// mean/variance in place by exponential moving average; eval mode uses
/// the running statistics. Returns the normalized output and, in train
/// mode, the batch mean/variance used (needed by the backward pass).
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: BatchNormMode,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    momentum: f64,
    epsilon: f64,
) -> Result<(Tensor, Option<(Vec<f64>, Vec<f64>)>)> {
    if input.rank() < 2 {
        return Err(Error::shape("batchnorm expects [N, C, ...]"));
    }
    if epsilon <= 0.0 {
        return Err(Error::config("epsilon must be > 0"));
    }
    let n = input.shape()[0];
    let c = input.shape()[1];
    let inner: usize = input.shape()[2..].iter().product();
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::shape("batchnorm parameter length vs channel count"));
    }
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    match mode {
        BatchNormMode::Train => {
            if n < 2 {
                return Err(Error::Data(
                    "batchnorm train mode needs batch size >= 2".into(),
                ));
            }
            let count = (n * inner) as f64;
            let mut means = vec![0.0; c];
            let mut vars = vec![0.0; c];
            for ci in 0..c {
                let mut s = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * inner;
                    for j in 0..inner {
                        s += x[base + j];
                    }
                }
                let mu = s / count;
                let mut v = 0.0;
                for ni in 0..n {
                    let base = (ni * c + ci) * inner;
                    for j in 0..inner {
                        let d = x[base + j] - mu;
                        v += d * d;
                    }
                }
                let var = v / count; // population variance
                means[ci] = mu;
                vars[ci] = var;
                running_mean.data_mut()[ci] =
                    (1.0 - momentum) * running_mean.data()[ci] + momentum * mu;
                running_var.data_mut()[ci] =
                    (1.0 - momentum) * running_var.data()[ci] + momentum * var;
                let inv = 1.0 / (var + epsilon).sqrt();
                let (g, b) = (gamma.data()[ci], beta.data()[ci]);
                for ni in 0..n {
                    let base = (ni * c + ci) * inner;
                    for j in 0..inner {
                        out.data_mut()[base + j] = g * (x[base + j] - mu) * inv + b;
                    }
                }
            }
            Ok((out, Some((means, vars))))
        }
        BatchNormMode::Eval => {
            for ci in 0..c {
                let mu = running_mean.data()[ci];
                let inv = 1.0 / (running_var.data()[ci] + epsilon).sqrt();
                let (g, b) = (gamma.data()[ci], beta.data()[ci]);
                for ni in 0..n {
                    let base = (ni * c + ci) * inner;
                    for j in 0..inner {
                        out.data_mut()[base + j] = g * (x[base + j] - mu) * inv + b;
                    }
                }
            }
            Ok((out, None))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Elementwise for relu/sigmoid/tanh; softmax over the last axis with
/// max subtraction.
pub fn apply_activation(input: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => input.map(|x| x.max(0.0)),
        Activation::Sigmoid => input.map(sigmoid),
        Activation::Tanh => input.map(f64::tanh),
        Activation::Softmax => {
            let last = *input.shape().last().unwrap();
            let rows = input.len() / last;
            let mut out = input.clone();
            for r in 0..rows {
                let row = &mut out.data_mut()[r * last..(r + 1) * last];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            out
        }
    }
}
