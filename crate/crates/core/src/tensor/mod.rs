//! Dense row-major n-dimensional arrays and the numeric kernels every
//! layer is built from.
//!
//! Values are stored as `f64` in memory; [`Precision`] only selects the
//! on-disk payload width. Kernels sum in a fixed left-to-right order so
//! results are bitwise deterministic given identical inputs.

mod io;
pub mod kernels;

pub use io::{load_tensor, read_tensor, save_tensor, write_tensor, Precision};

use crate::error::{Error, Result};

/// Dense n-dimensional array, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::shape("zero extent in shape"));
        }
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Flat offset of a multi-index; bounds-checked per axis.
    pub fn offset(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.len() {
            return Err(Error::shape(format!(
                "index rank {} vs tensor rank {}",
                idx.len(),
                self.shape.len()
            )));
        }
        let mut off = 0usize;
        for (axis, (&i, &e)) in idx.iter().zip(&self.shape).enumerate() {
            if i >= e {
                return Err(Error::shape(format!(
                    "index {} out of range 0..{} on axis {}",
                    i, e, axis
                )));
            }
            off = off * e + i;
        }
        Ok(off)
    }

    pub fn at(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], v: f64) -> Result<()> {
        let off = self.offset(idx)?;
        self.data[off] = v;
        Ok(())
    }

    /// Same data, new shape. Element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise combine; shapes must match exactly.
    pub fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }
}

/// Matrix product of `[n, k] x [k, m] -> [n, m]`, fixed summation order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape("matmul expects rank-2 tensors"));
    }
    let (n, k) = (a.shape[0], a.shape[1]);
    let (k2, m) = (b.shape[0], b.shape[1]);
    if k != k2 {
        return Err(Error::shape(format!("matmul inner dims {} vs {}", k, k2)));
    }
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for p in 0..k {
            let av = a.data[i * k + p];
            let brow = &b.data[p * m..(p + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::new(vec![n, m], out)
}
