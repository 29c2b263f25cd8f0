//! Max pooling layers; argmax indices from forward drive the backward
//! scatter.

use super::{require_cache, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::kernels::{maxpool1d, maxpool2d_spatial};
use crate::tensor::Tensor;

/// Pool along the last axis of `[N, C, L]`.
pub struct MaxPool1d {
    pub window: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<Vec<usize>>)>, // input shape, per-sample argmax
}

impl MaxPool1d {
    pub fn new(window: usize, stride: usize) -> Self {
        MaxPool1d {
            window,
            stride,
            cache: None,
        }
    }
}

impl Layer for MaxPool1d {
    fn kind(&self) -> &'static str {
        "maxpool1d"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 3 {
            return Err(Error::shape("maxpool1d expects [N, C, L]"));
        }
        if self.window > in_shape[2] {
            return Err(Error::shape(format!(
                "pool window {} exceeds length {}",
                self.window, in_shape[2]
            )));
        }
        let l_out = (in_shape[2] - self.window) / self.stride + 1;
        Ok(vec![in_shape[0], in_shape[1], l_out])
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let out_shape = self.out_shape(input.shape())?;
        let n = input.shape()[0];
        let per_in: usize = input.shape()[1..].iter().product();
        let per_out: usize = out_shape[1..].iter().product();
        let mut out = Tensor::zeros(&out_shape);
        let mut args = Vec::with_capacity(n);
        for ni in 0..n {
            let sample = Tensor::new(
                input.shape()[1..].to_vec(),
                input.data()[ni * per_in..(ni + 1) * per_in].to_vec(),
            )?;
            let (y, arg) = maxpool1d(&sample, self.window, self.stride)?;
            out.data_mut()[ni * per_out..(ni + 1) * per_out].copy_from_slice(y.data());
            args.push(arg);
        }
        self.cache = Some((input.shape().to_vec(), args));
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (in_shape, args) = require_cache(&self.cache)?;
        let per_in: usize = in_shape[1..].iter().product();
        let per_out = upstream.len() / in_shape[0];
        let mut dx = Tensor::zeros(in_shape);
        for (ni, arg) in args.iter().enumerate() {
            if arg.len() != per_out {
                return Err(Error::shape("maxpool1d upstream shape mismatch"));
            }
            for (oi, &src) in arg.iter().enumerate() {
                dx.data_mut()[ni * per_in + src] += upstream.data()[ni * per_out + oi];
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
}

/// Pool over the two trailing spatial axes of `[N, C, D, H, W]`.
pub struct MaxPool2dSpatial {
    pub window: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<Vec<usize>>)>,
}

impl MaxPool2dSpatial {
    pub fn new(window: usize, stride: usize) -> Self {
        MaxPool2dSpatial {
            window,
            stride,
            cache: None,
        }
    }
}

impl Layer for MaxPool2dSpatial {
    fn kind(&self) -> &'static str {
        "maxpool2d"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 5 {
            return Err(Error::shape("maxpool2d expects [N, C, D, H, W]"));
        }
        if self.window > in_shape[3] || self.window > in_shape[4] {
            return Err(Error::shape("pool window exceeds spatial extent"));
        }
        let h_out = (in_shape[3] - self.window) / self.stride + 1;
        let w_out = (in_shape[4] - self.window) / self.stride + 1;
        Ok(vec![in_shape[0], in_shape[1], in_shape[2], h_out, w_out])
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let out_shape = self.out_shape(input.shape())?;
        let n = input.shape()[0];
        let per_in: usize = input.shape()[1..].iter().product();
        let per_out: usize = out_shape[1..].iter().product();
        let mut out = Tensor::zeros(&out_shape);
        let mut args = Vec::with_capacity(n);
        for ni in 0..n {
            let sample = Tensor::new(
                input.shape()[1..].to_vec(),
                input.data()[ni * per_in..(ni + 1) * per_in].to_vec(),
            )?;
            let (y, arg) = maxpool2d_spatial(&sample, self.window, self.stride)?;
            out.data_mut()[ni * per_out..(ni + 1) * per_out].copy_from_slice(y.data());
            args.push(arg);
        }
        self.cache = Some((input.shape().to_vec(), args));
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let (in_shape, args) = require_cache(&self.cache)?;
        let per_in: usize = in_shape[1..].iter().product();
        let per_out = upstream.len() / in_shape[0];
        let mut dx = Tensor::zeros(in_shape);
        for (ni, arg) in args.iter().enumerate() {
            if arg.len() != per_out {
                return Err(Error::shape("maxpool2d upstream shape mismatch"));
            }
            for (oi, &src) in arg.iter().enumerate() {
                dx.data_mut()[ni * per_in + src] += upstream.data()[ni * per_out + oi];
            }
        }
        Ok(dx)
    }
}
