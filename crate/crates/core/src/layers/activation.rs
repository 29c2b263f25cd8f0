//! Activation layer wrapping the elementwise kernels.

use super::{require_cache, Layer, Mode};
use crate::error::{Error, Result};
use crate::tensor::kernels::{apply_activation, Activation};
use crate::tensor::Tensor;

pub struct ActivationLayer {
    pub activation: Activation,
    cached_output: Option<Tensor>,
}

impl ActivationLayer {
    pub fn new(activation: Activation) -> Self {
        ActivationLayer {
            activation,
            cached_output: None,
        }
    }
}

impl Layer for ActivationLayer {
    fn kind(&self) -> &'static str {
        match self.activation {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        }
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        Ok(in_shape.to_vec())
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let out = apply_activation(input, self.activation);
        self.cached_output = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let y = require_cache(&self.cached_output)?;
        if upstream.shape() != y.shape() {
            return Err(Error::shape("activation upstream shape mismatch"));
        }
        match self.activation {
            Activation::Relu => upstream.zip(y, |g, yv| if yv > 0.0 { g } else { 0.0 }),
            Activation::Sigmoid => upstream.zip(y, |g, yv| g * yv * (1.0 - yv)),
            Activation::Tanh => upstream.zip(y, |g, yv| g * (1.0 - yv * yv)),
            Activation::Softmax => {
                // dx_i = y_i * (g_i - sum_j g_j y_j), per row
                let last = *y.shape().last().unwrap();
                let rows = y.len() / last;
                let mut dx = Tensor::zeros(y.shape());
                for r in 0..rows {
                    let yr = &y.data()[r * last..(r + 1) * last];
                    let gr = &upstream.data()[r * last..(r + 1) * last];
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..last {
                        dx.data_mut()[r * last + j] = yr[j] * (gr[j] - dot);
                    }
                }
                Ok(dx)
            }
        }
    }
}
