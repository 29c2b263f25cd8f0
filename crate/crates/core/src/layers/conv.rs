//! Convolution layers (cross-correlation convention). Batched: the layer
//! loops the per-sample kernels over the leading batch axis.

use super::{glorot_limit, require_cache, uniform_init, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::kernels::{conv1d_forward, conv3d_forward, conv_out_len};
use crate::tensor::Tensor;

/// 1D convolution over `[N, C_in, L]`.
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    weights: Param, // [C_out, C_in, K]
    bias: Param,    // [C_out]
    cached_input: Option<Tensor>,
}

impl Conv1d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Self {
        let limit = glorot_limit(c_in * kernel, c_out * kernel);
        Conv1d {
            c_in,
            c_out,
            kernel,
            stride,
            padding,
            weights: Param::new("weights", uniform_init(rng, &[c_out, c_in, kernel], limit)),
            bias: Param::new("bias", Tensor::zeros(&[c_out])),
            cached_input: None,
        }
    }
}

impl Layer for Conv1d {
    fn kind(&self) -> &'static str {
        "conv1d"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 3 || in_shape[1] != self.c_in {
            return Err(Error::shape(format!(
                "conv1d expects [N, {}, L], got {:?}",
                self.c_in, in_shape
            )));
        }
        let l_out = conv_out_len(in_shape[2], self.kernel, self.stride, self.padding)?;
        Ok(vec![in_shape[0], self.c_out, l_out])
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let out_shape = self.out_shape(input.shape())?;
        let n = input.shape()[0];
        let per_in: usize = input.shape()[1..].iter().product();
        let mut out = Tensor::zeros(&out_shape);
        let per_out: usize = out_shape[1..].iter().product();
        for ni in 0..n {
            let sample = Tensor::new(
                input.shape()[1..].to_vec(),
                input.data()[ni * per_in..(ni + 1) * per_in].to_vec(),
            )?;
            let y = conv1d_forward(
                &sample,
                &self.weights.value,
                &self.bias.value,
                self.stride,
                self.padding,
            )?;
            out.data_mut()[ni * per_out..(ni + 1) * per_out].copy_from_slice(y.data());
        }
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = require_cache(&self.cached_input)?.clone();
        let (n, c_in, len) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let expect = self.out_shape(input.shape())?;
        if upstream.shape() != expect.as_slice() {
            return Err(Error::shape(format!(
                "upstream {:?} vs forward output {:?}",
                upstream.shape(),
                expect
            )));
        }
        let l_out = expect[2];
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let mut dx = Tensor::zeros(input.shape());
        let x = input.data();
        let gy = upstream.data();
        let w = self.weights.value.data();
        for ni in 0..n {
            for co in 0..self.c_out {
                for lo in 0..l_out {
                    let g = gy[(ni * self.c_out + co) * l_out + lo];
                    self.bias.grad.data_mut()[co] += g;
                    for ci in 0..c_in {
                        for kk in 0..k {
                            let pos = lo * s + kk;
                            if pos < p || pos - p >= len {
                                continue;
                            }
                            let xi = (ni * c_in + ci) * len + (pos - p);
                            self.weights.grad.data_mut()[(co * c_in + ci) * k + kk] += g * x[xi];
                            dx.data_mut()[xi] += g * w[(co * c_in + ci) * k + kk];
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weights, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weights, &mut self.bias]
    }
}

/// 3D convolution over `[N, C_in, D, H, W]`.
pub struct Conv3d {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: [usize; 3],
    pub strides: [usize; 3],
    pub paddings: [usize; 3],
    weights: Param, // [C_out, C_in, Kd, Kh, Kw]
    bias: Param,
    cached_input: Option<Tensor>,
}

impl Conv3d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: [usize; 3],
        strides: [usize; 3],
        paddings: [usize; 3],
        rng: &mut Rng,
    ) -> Self {
        let kvol = kernel[0] * kernel[1] * kernel[2];
        let limit = glorot_limit(c_in * kvol, c_out * kvol);
        Conv3d {
            c_in,
            c_out,
            kernel,
            strides,
            paddings,
            weights: Param::new(
                "weights",
                uniform_init(rng, &[c_out, c_in, kernel[0], kernel[1], kernel[2]], limit),
            ),
            bias: Param::new("bias", Tensor::zeros(&[c_out])),
            cached_input: None,
        }
    }
}

impl Layer for Conv3d {
    fn kind(&self) -> &'static str {
        "conv3d"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 5 || in_shape[1] != self.c_in {
            return Err(Error::shape(format!(
                "conv3d expects [N, {}, D, H, W], got {:?}",
                self.c_in, in_shape
            )));
        }
        let d = conv_out_len(in_shape[2], self.kernel[0], self.strides[0], self.paddings[0])?;
        let h = conv_out_len(in_shape[3], self.kernel[1], self.strides[1], self.paddings[1])?;
        let w = conv_out_len(in_shape[4], self.kernel[2], self.strides[2], self.paddings[2])?;
        Ok(vec![in_shape[0], self.c_out, d, h, w])
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let out_shape = self.out_shape(input.shape())?;
        let n = input.shape()[0];
        let per_in: usize = input.shape()[1..].iter().product();
        let per_out: usize = out_shape[1..].iter().product();
        let mut out = Tensor::zeros(&out_shape);
        for ni in 0..n {
            let sample = Tensor::new(
                input.shape()[1..].to_vec(),
                input.data()[ni * per_in..(ni + 1) * per_in].to_vec(),
            )?;
            let y = conv3d_forward(
                &sample,
                &self.weights.value,
                &self.bias.value,
                self.strides,
                self.paddings,
            )?;
            out.data_mut()[ni * per_out..(ni + 1) * per_out].copy_from_slice(y.data());
        }
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = require_cache(&self.cached_input)?.clone();
        let expect = self.out_shape(input.shape())?;
        if upstream.shape() != expect.as_slice() {
            return Err(Error::shape("conv3d upstream shape mismatch"));
        }
        let (n, c_in) = (input.shape()[0], input.shape()[1]);
        let (d, h, w) = (input.shape()[2], input.shape()[3], input.shape()[4]);
        let (d_o, h_o, w_o) = (expect[2], expect[3], expect[4]);
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, sw] = self.strides;
        let [pd, ph, pw] = self.paddings;
        let mut dx = Tensor::zeros(input.shape());
        let x = input.data();
        let gy = upstream.data();
        let wt = self.weights.value.data();
        for ni in 0..n {
            for co in 0..self.c_out {
                for od in 0..d_o {
                    for oh in 0..h_o {
                        for ow in 0..w_o {
                            let g = gy[(((ni * self.c_out + co) * d_o + od) * h_o + oh) * w_o + ow];
                            self.bias.grad.data_mut()[co] += g;
                            for ci in 0..c_in {
                                for zd in 0..kd {
                                    let qd = od * sd + zd;
                                    if qd < pd || qd - pd >= d {
                                        continue;
                                    }
                                    let id = qd - pd;
                                    for zh in 0..kh {
                                        let qh = oh * sh + zh;
                                        if qh < ph || qh - ph >= h {
                                            continue;
                                        }
                                        let ih = qh - ph;
                                        for zw in 0..kw {
                                            let qw = ow * sw + zw;
                                            if qw < pw || qw - pw >= w {
                                                continue;
                                            }
                                            let iw = qw - pw;
                                            let xi = (((ni * c_in + ci) * d + id) * h + ih) * w + iw;
                                            let wi = (((co * c_in + ci) * kd + zd) * kh + zh) * kw
                                                + zw;
                                            self.weights.grad.data_mut()[wi] += g * x[xi];
                                            dx.data_mut()[xi] += g * wt[wi];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weights, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weights, &mut self.bias]
    }
}
