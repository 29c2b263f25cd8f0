//! Fully connected layer: `[N, F_in] -> [N, F_out]`.

use super::{glorot_limit, require_cache, uniform_init, Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{matmul, Tensor};

pub struct Dense {
    pub f_in: usize,
    pub f_out: usize,
    weights: Param, // [F_in, F_out]
    bias: Param,    // [F_out]
    cached_input: Option<Tensor>,
}

impl Dense {
    pub fn new(f_in: usize, f_out: usize, rng: &mut Rng) -> Self {
        let limit = glorot_limit(f_in, f_out);
        Dense {
            f_in,
            f_out,
            weights: Param::new("weights", uniform_init(rng, &[f_in, f_out], limit)),
            bias: Param::new("bias", Tensor::zeros(&[f_out])),
            cached_input: None,
        }
    }

    /// Replace parameters outright (tests, hand-built models).
    pub fn set_params(&mut self, weights: Tensor, bias: Tensor) -> Result<()> {
        if weights.shape() != [self.f_in, self.f_out] || bias.shape() != [self.f_out] {
            return Err(Error::shape("dense parameter shapes"));
        }
        self.weights.value = weights;
        self.bias.value = bias;
        Ok(())
    }
}

impl Layer for Dense {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 2 || in_shape[1] != self.f_in {
            return Err(Error::shape(format!(
                "dense expects [N, {}], got {:?}",
                self.f_in, in_shape
            )));
        }
        Ok(vec![in_shape[0], self.f_out])
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        self.out_shape(input.shape())?;
        let mut out = matmul(input, &self.weights.value)?;
        let n = input.shape()[0];
        for ni in 0..n {
            for j in 0..self.f_out {
                out.data_mut()[ni * self.f_out + j] += self.bias.value.data()[j];
            }
        }
        self.cached_input = Some(input.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let input = require_cache(&self.cached_input)?;
        if upstream.shape() != [input.shape()[0], self.f_out] {
            return Err(Error::shape("dense upstream shape mismatch"));
        }
        let n = input.shape()[0];
        // dW = x^T g
        for i in 0..self.f_in {
            for j in 0..self.f_out {
                let mut acc = 0.0;
                for ni in 0..n {
                    acc += input.data()[ni * self.f_in + i] * upstream.data()[ni * self.f_out + j];
                }
                self.weights.grad.data_mut()[i * self.f_out + j] += acc;
            }
        }
        for j in 0..self.f_out {
            let mut acc = 0.0;
            for ni in 0..n {
                acc += upstream.data()[ni * self.f_out + j];
            }
            self.bias.grad.data_mut()[j] += acc;
        }
        // dx = g W^T
        let mut dx = Tensor::zeros(input.shape());
        for ni in 0..n {
            for i in 0..self.f_in {
                let mut acc = 0.0;
                for j in 0..self.f_out {
                    acc += upstream.data()[ni * self.f_out + j]
                        * self.weights.value.data()[i * self.f_out + j];
                }
                dx.data_mut()[ni * self.f_in + i] = acc;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;

    #[test]
    fn identity_weights_pass_through() {
        let mut d = Dense::new(2, 2, &mut rng_from(0));
        d.set_params(
            Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 2], vec![3.0, -4.0]).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn zero_weights_yield_bias() {
        let mut d = Dense::new(2, 3, &mut rng_from(0));
        d.set_params(
            Tensor::zeros(&[2, 3]),
            Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap(),
        )
        .unwrap();
        let x = Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let y = d.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn hand_affine_case() {
        let mut d = Dense::new(2, 1, &mut rng_from(0));
        d.set_params(
            Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap(),
            Tensor::new(vec![1], vec![0.5]).unwrap(),
        )
        .unwrap();
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let y = d.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[3.5]);
    }

    #[test]
    fn scalar_product_rule() {
        // y = w*x at x=3, w=2: dx = 2, dw = 3 for unit upstream
        let mut d = Dense::new(1, 1, &mut rng_from(0));
        d.set_params(Tensor::new(vec![1, 1], vec![2.0]).unwrap(), Tensor::zeros(&[1]))
            .unwrap();
        let x = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        d.forward(&x, Mode::Train).unwrap();
        let dx = d.backward(&Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[2.0]);
        assert_eq!(d.params()[0].grad.data(), &[3.0]);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let mut d = Dense::new(3, 2, &mut rng_from(0));
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert!(d.forward(&x, Mode::Eval).is_err());
    }
}
