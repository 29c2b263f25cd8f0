//! Structural layers that move data between the conv and recurrent parts
//! of a branch: axis swaps, channel expansion, temporal reductions. All
//! are parameter-free with exact backward passes.

use super::{require_cache, Layer, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Swap axes 1 and 2 of a rank-3 tensor: `[N, A, B] -> [N, B, A]`.
/// Used to turn conv channel-major output into time-major LSTM input.
pub struct Transpose12 {
    cache: Option<Vec<usize>>,
}

impl Transpose12 {
    pub fn new() -> Self {
        Transpose12 { cache: None }
    }
}

impl Default for Transpose12 {
    fn default() -> Self {
        Self::new()
    }
}

fn transpose12(input: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 {
        return Err(Error::shape("transpose12 expects rank-3"));
    }
    let (n, a, b) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let mut out = Tensor::zeros(&[n, b, a]);
    for ni in 0..n {
        for ai in 0..a {
            for bi in 0..b {
                out.data_mut()[(ni * b + bi) * a + ai] = input.data()[(ni * a + ai) * b + bi];
            }
        }
    }
    Ok(out)
}

impl Layer for Transpose12 {
    fn kind(&self) -> &'static str {
        "transpose12"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 3 {
            return Err(Error::shape("transpose12 expects rank-3"));
        }
        Ok(vec![in_shape[0], in_shape[2], in_shape[1]])
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        self.cache = Some(input.shape().to_vec());
        transpose12(input)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        require_cache(&self.cache)?;
        transpose12(upstream)
    }
}

/// Keep the last timestep: `[N, T, H] -> [N, H]`.
pub struct TakeLast {
    cache: Option<Vec<usize>>,
}

impl TakeLast {
    pub fn new() -> Self {
        TakeLast { cache: None }
    }
}

impl Default for TakeLast {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for TakeLast {
    fn kind(&self) -> &'static str {
        "take_last"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 3 {
            return Err(Error::shape("take_last expects [N, T, H]"));
        }
        Ok(vec![in_shape[0], in_shape[2]])
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (n, t, h) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let mut out = Tensor::zeros(&[n, h]);
        for ni in 0..n {
            out.data_mut()[ni * h..(ni + 1) * h]
                .copy_from_slice(&input.data()[(ni * t + t - 1) * h..(ni * t + t) * h]);
        }
        self.cache = Some(input.shape().to_vec());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let in_shape = require_cache(&self.cache)?;
        let (n, t, h) = (in_shape[0], in_shape[1], in_shape[2]);
        let mut dx = Tensor::zeros(in_shape);
        for ni in 0..n {
            dx.data_mut()[(ni * t + t - 1) * h..(ni * t + t) * h]
                .copy_from_slice(&upstream.data()[ni * h..(ni + 1) * h]);
        }
        Ok(dx)
    }
}

/// Mean over the time axis: `[N, T, C] -> [N, C]`. Used by the CNN-only
/// ablation variant in place of the LSTM stack.
pub struct MeanOverTime {
    cache: Option<Vec<usize>>,
}

impl MeanOverTime {
    pub fn new() -> Self {
        MeanOverTime { cache: None }
    }
}

impl Default for MeanOverTime {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for MeanOverTime {
    fn kind(&self) -> &'static str {
        "mean_over_time"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 3 {
            return Err(Error::shape("mean_over_time expects [N, T, C]"));
        }
        Ok(vec![in_shape[0], in_shape[2]])
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (n, t, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let mut out = Tensor::zeros(&[n, c]);
        for ni in 0..n {
            for ti in 0..t {
                for ci in 0..c {
                    out.data_mut()[ni * c + ci] += input.data()[(ni * t + ti) * c + ci];
                }
            }
        }
        let inv = 1.0 / t as f64;
        for v in out.data_mut() {
            *v *= inv;
        }
        self.cache = Some(input.shape().to_vec());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let in_shape = require_cache(&self.cache)?;
        let (n, t, c) = (in_shape[0], in_shape[1], in_shape[2]);
        let inv = 1.0 / t as f64;
        let mut dx = Tensor::zeros(in_shape);
        for ni in 0..n {
            for ti in 0..t {
                for ci in 0..c {
                    dx.data_mut()[(ni * t + ti) * c + ci] = upstream.data()[ni * c + ci] * inv;
                }
            }
        }
        Ok(dx)
    }
}

/// Insert a singleton channel axis: `[N, D, H, W] -> [N, 1, D, H, W]`.
pub struct ExpandChannel {
    cache: Option<Vec<usize>>,
}

impl ExpandChannel {
    pub fn new() -> Self {
        ExpandChannel { cache: None }
    }
}

impl Default for ExpandChannel {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for ExpandChannel {
    fn kind(&self) -> &'static str {
        "expand_channel"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 4 {
            return Err(Error::shape("expand_channel expects [N, D, H, W]"));
        }
        Ok(vec![in_shape[0], 1, in_shape[1], in_shape[2], in_shape[3]])
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let out_shape = self.out_shape(input.shape())?;
        self.cache = Some(input.shape().to_vec());
        input.reshape(&out_shape)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let in_shape = require_cache(&self.cache)?;
        upstream.reshape(in_shape)
    }
}

/// Global spatial mean per (channel, frame) then time-major transpose:
/// `[N, C, D, H, W] -> [N, D, C]`. Bridges the 3D conv stack into the
/// recurrent part of the silhouette branch.
pub struct SpatialMeanToSeq {
    cache: Option<Vec<usize>>,
}

impl SpatialMeanToSeq {
    pub fn new() -> Self {
        SpatialMeanToSeq { cache: None }
    }
}

impl Default for SpatialMeanToSeq {
    fn default() -> Self {
        Self::new()
    }
}

impl Layer for SpatialMeanToSeq {
    fn kind(&self) -> &'static str {
        "spatial_mean_to_seq"
    }

    fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        if in_shape.len() != 5 {
            return Err(Error::shape("spatial_mean_to_seq expects [N, C, D, H, W]"));
        }
        Ok(vec![in_shape[0], in_shape[2], in_shape[1]])
    }

    fn forward(&mut self, input: &Tensor, _mode: Mode) -> Result<Tensor> {
        let s = input.shape();
        let (n, c, d, h, w) = (s[0], s[1], s[2], s[3], s[4]);
        let inv = 1.0 / (h * w) as f64;
        let mut out = Tensor::zeros(&[n, d, c]);
        for ni in 0..n {
            for ci in 0..c {
                for di in 0..d {
                    let base = ((ni * c + ci) * d + di) * h * w;
                    let mut acc = 0.0;
                    for j in 0..h * w {
                        acc += input.data()[base + j];
                    }
                    out.data_mut()[(ni * d + di) * c + ci] = acc * inv;
                }
            }
        }
        self.cache = Some(s.to_vec());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let in_shape = require_cache(&self.cache)?;
        let (n, c, d, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3], in_shape[4]);
        let inv = 1.0 / (h * w) as f64;
        let mut dx = Tensor::zeros(in_shape);
        for ni in 0..n {
            for ci in 0..c {
                for di in 0..d {
                    let g = upstream.data()[(ni * d + di) * c + ci] * inv;
                    let base = ((ni * c + ci) * d + di) * h * w;
                    for j in 0..h * w {
                        dx.data_mut()[base + j] = g;
                    }
                }
            }
        }
        Ok(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_round_trips() {
        let x = Tensor::new(vec![1, 2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let mut t = Transpose12::new();
        let y = t.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 3, 2]);
        assert_eq!(y.at(&[0, 2, 1]).unwrap(), x.at(&[0, 1, 2]).unwrap());
        let back = t.backward(&y).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn take_last_picks_final_step() {
        let x = Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut l = TakeLast::new();
        let y = l.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[5.0, 6.0]);
        let dx = l.backward(&Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_over_time_averages() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut l = MeanOverTime::new();
        let y = l.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0]);
    }
}
