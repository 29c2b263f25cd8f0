//! Differentiable layers. Each layer caches whatever its backward pass
//! needs during forward; calling backward without a matching forward is a
//! state error. Parameter gradients always mirror parameter shapes.

mod activation;
mod conv;
mod dense;
mod dropout;
mod lstm;
mod norm;
mod pool;
mod reshape;

pub use activation::ActivationLayer;
pub use conv::{Conv1d, Conv3d};
pub use dense::Dense;
pub use dropout::Dropout;
pub use lstm::{lstm_sequence, lstm_step, Direction, LstmCell, LstmLayer};
pub use norm::BatchNorm;
pub use pool::{MaxPool1d, MaxPool2dSpatial};
pub use reshape::{ExpandChannel, MeanOverTime, SpatialMeanToSeq, TakeLast, Transpose12};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use rand::Rng as _;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named parameter with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: &'static str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { name, value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }
}

pub trait Layer {
    fn kind(&self) -> &'static str;

    /// Symbolic shape walk: output shape for a given batched input shape.
    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>>;

    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor>;

    /// Propagate `upstream` (gradient w.r.t. this layer's output) to the
    /// input, accumulating parameter gradients along the way.
    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor>;

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Everything that must go into a checkpoint (parameters plus
    /// non-trainable state such as batch-norm running statistics).
    fn state_tensors(&self) -> Vec<(String, Tensor)> {
        self.params()
            .into_iter()
            .map(|p| (p.name.to_string(), p.value.clone()))
            .collect()
    }

    fn load_state_tensor(&mut self, name: &str, t: Tensor) -> Result<()> {
        for p in self.params_mut() {
            if p.name == name {
                if p.value.shape() != t.shape() {
                    return Err(Error::shape(format!(
                        "checkpoint tensor {} shape {:?} vs expected {:?}",
                        name,
                        t.shape(),
                        p.value.shape()
                    )));
                }
                p.value = t;
                return Ok(());
            }
        }
        Err(Error::Format(format!("unknown state tensor {}", name)))
    }
}

pub(crate) fn uniform_init(rng: &mut Rng, shape: &[usize], limit: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree by construction")
}

/// Glorot-style limit for conv/dense weights.
pub(crate) fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn require_cache<T>(cache: &Option<T>) -> Result<&T> {
    cache
        .as_ref()
        .ok_or_else(|| Error::State("backward called before forward".into()))
}
