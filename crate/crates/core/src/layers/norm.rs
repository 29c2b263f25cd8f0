//! Batch normalization with running-statistics tracking.

use super::{require_cache, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::kernels::{batchnorm_forward, BatchNormMode};
use crate::tensor::Tensor;

struct BnCache {
    input: Tensor,
    mode: Mode,
    // train: batch stats used; eval: running stats snapshot
    means: Vec<f64>,
    vars: Vec<f64>,
}

pub struct BatchNorm {
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
    gamma: Param,
    beta: Param,
    running_mean: Tensor,
    running_var: Tensor,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm::with_options(channels, 0.1, 1e-5)
    }

    pub fn with_options(channels: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNorm {
            channels,
            momentum,
            epsilon,
            gamma: Param::new("gamma", Tensor::full(&[channels], 1.0)),
            beta: Param::new("beta", Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            cache: None,
        }
    }
}

impl Layer for BatchNorm {
    fn kind(&self) -> &'static str {
        "batchnorm"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() < 2 || in_shape[1] != self.channels {
            return Err(Error::shape(format!(
                "batchnorm expects [N, {}, ...], got {:?}",
                self.channels, in_shape
            )));
        }
        Ok(in_shape.to_vec())
    }

    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        self.out_shape(input.shape())?;
        let bn_mode = match mode {
            Mode::Train => BatchNormMode::Train,
            Mode::Eval => BatchNormMode::Eval,
        };
        let (out, stats) = batchnorm_forward(
            input,
            &self.gamma.value,
            &self.beta.value,
            bn_mode,
            &mut self.running_mean,
            &mut self.running_var,
            self.momentum,
            self.epsilon,
        )?;
        let (means, vars) = match stats {
            Some(s) => s,
            None => (
                self.running_mean.data().to_vec(),
                self.running_var.data().to_vec(),
            ),
        };
        self.cache = Some(BnCache {
            input: input.clone(),
            mode,
            means,
            vars,
        });
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let cache = require_cache(&self.cache)?;
        if upstream.shape() != cache.input.shape() {
            return Err(Error::shape("batchnorm upstream shape mismatch"));
        }
        let n = cache.input.shape()[0];
        let c = self.channels;
        let inner: usize = cache.input.shape()[2..].iter().product();
        let m = (n * inner) as f64;
        let x = cache.input.data();
        let gy = upstream.data();
        let mut dx = Tensor::zeros(cache.input.shape());
        for ci in 0..c {
            let mu = cache.means[ci];
            let inv = 1.0 / (cache.vars[ci] + self.epsilon).sqrt();
            let g = self.gamma.value.data()[ci];
            let mut sum_gy = 0.0;
            let mut sum_gy_xhat = 0.0;
            for ni in 0..n {
                let base = (ni * c + ci) * inner;
                for j in 0..inner {
                    let xhat = (x[base + j] - mu) * inv;
                    sum_gy += gy[base + j];
                    sum_gy_xhat += gy[base + j] * xhat;
                }
            }
            self.beta.grad.data_mut()[ci] += sum_gy;
            self.gamma.grad.data_mut()[ci] += sum_gy_xhat;
            match cache.mode {
                Mode::Train => {
                    for ni in 0..n {
                        let base = (ni * c + ci) * inner;
                        for j in 0..inner {
                            let xhat = (x[base + j] - mu) * inv;
                            dx.data_mut()[base + j] = g * inv / m
                                * (m * gy[base + j] - sum_gy - xhat * sum_gy_xhat);
                        }
                    }
                }
                Mode::Eval => {
                    for ni in 0..n {
                        let base = (ni * c + ci) * inner;
                        for j in 0..inner {
                            dx.data_mut()[base + j] = g * inv * gy[base + j];
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn state_tensors(&self) -> Vec<(String, Tensor)> {
        vec![
            ("gamma".into(), self.gamma.value.clone()),
            ("beta".into(), self.beta.value.clone()),
            ("running_mean".into(), self.running_mean.clone()),
            ("running_var".into(), self.running_var.clone()),
        ]
    }

    fn load_state_tensor(&mut self, name: &str, t: Tensor) -> Result<()> {
        match name {
            "gamma" => self.gamma.value = t,
            "beta" => self.beta.value = t,
            "running_mean" => self.running_mean = t,
            "running_var" => self.running_var = t,
            _ => return Err(Error::Format(format!("unknown batchnorm tensor {}", name))),
        }
        Ok(())
    }
}
