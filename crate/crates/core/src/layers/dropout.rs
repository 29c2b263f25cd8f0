//! Inverted dropout: survivors are scaled by 1/(1-rate) at train time so
//! eval forward needs no correction.

use super::{require_cache, Layer, Mode};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};
use crate::tensor::Tensor;
use rand::Rng as _;

pub struct Dropout {
    pub rate: f64,
    rng: Rng,
    cache: Option<Option<Tensor>>, // None entry = eval / rate 0 (identity)
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {} not in [0, 1)", rate)));
        }
        Ok(Dropout {
            rate,
            rng: rng_from(seed),
            cache: None,
        })
    }

    /// Reset the mask stream; used by gradient checks that must replay
    /// the same mask across repeated forwards.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = rng_from(seed);
    }
}

impl Layer for Dropout {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        Ok(in_shape.to_vec())
    }

    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Eval || self.rate == 0.0 {
            self.cache = Some(None);
            return Ok(input.clone());
        }
        let keep_scale = 1.0 / (1.0 - self.rate);
        let mut mask = Tensor::zeros(input.shape());
        for m in mask.data_mut() {
            if self.rng.gen::<f64>() >= self.rate {
                *m = keep_scale;
            }
        }
        let out = input.zip(&mask, |x, m| x * m)?;
        self.cache = Some(Some(mask));
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        match require_cache(&self.cache)? {
            None => Ok(upstream.clone()),
            Some(mask) => upstream.zip(mask, |g, m| g * m),
        }
    }
}
