use crate::error::{Error, Result};

/// Dense row-major f64 tensor. Signals are `[channels, time]`, kernels
/// `[out, in, k]` (or `[in, out, k]` for transposed convolutions).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    data: Vec<f64>,
    shape: Vec<usize>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} elements for shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { data, shape })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            data: vec![0.0; shape.iter().product()],
            shape: shape.to_vec(),
        }
    }

    /// Mono waveform as a `[1, T]` tensor.
    pub fn from_signal(samples: &[f64]) -> Self {
        Self {
            data: samples.to_vec(),
            shape: vec![1, samples.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Row `i` of a 2-D tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.shape[1];
        &mut self.data[i * w..(i + 1) * w]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// Keeps the first `len` columns of a 2-D tensor.
    pub fn truncate_time(&self, len: usize) -> Tensor {
        let rows = self.shape[0];
        let data = (0..rows).flat_map(|r| self.row(r)[..len].iter().copied()).collect();
        Tensor {
            data,
            shape: vec![rows, len],
        }
    }

    /// Zero pads a 2-D tensor on the right to `len` columns.
    pub fn pad_time(&self, len: usize) -> Tensor {
        let rows = self.shape[0];
        let mut out = Tensor::zeros(&[rows, len]);
        for r in 0..rows {
            let src = self.row(r);
            out.row_mut(r)[..src.len()].copy_from_slice(src);
        }
        out
    }
}
