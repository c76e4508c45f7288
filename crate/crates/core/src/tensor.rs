//! Dense row-major `f64` tensors.
//!
//! Images use the channels x height x width layout throughout the crate.

use std::fmt;

use crate::error::{Error, Result};

/// Lower bound on the magnitude of any value passed to a reciprocal.
pub const EPS_RECIP: f64 = 1e-3;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape(
                "tensor",
                "extents",
                "positive extents",
                format!("{shape:?}"),
            ));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                "data length",
                numel,
                data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Builds a `C x H x W` tensor from a per-element function.
    pub fn from_fn_chw(
        c: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(c * h * w);
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data.push(f(ci, y, x));
                }
            }
        }
        Tensor {
            shape: vec![c, h, w],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Returns `(channels, height, width)` or an error for non-image tensors.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(
                "chw",
                "rank",
                3,
                self.shape.len(),
            )),
        }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_shape("zip_map", other)?;
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

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Repeats a single-channel image along the channel axis.
    pub fn repeat_channels(&self, channels: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw()?;
        if c != 1 {
            return Err(Error::shape("repeat_channels", "channels", 1, c));
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for _ in 0..channels {
            data.extend_from_slice(&self.data);
        }
        Ok(Tensor {
            shape: vec![channels, h, w],
            data,
        })
    }

    /// Channel slice `[start, start + len)` of an image tensor.
    pub fn channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw()?;
        if start + len > c || len == 0 {
            return Err(Error::shape(
                "channels",
                "channel range",
                format!("within 0..{c}"),
                format!("{start}..{}", start + len),
            ));
        }
        let plane = h * w;
        Ok(Tensor {
            shape: vec![len, h, w],
            data: self.data[start * plane..(start + len) * plane].to_vec(),
        })
    }

    pub(crate) fn expect_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                first_mismatch(&self.shape, &other.shape),
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        Ok(())
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

/// Names the first axis where two shapes disagree, e.g. `"dim 2"` or `"rank"`.
pub(crate) fn first_mismatch(a: &[usize], b: &[usize]) -> String {
    if a.len() != b.len() {
        return "rank".to_string();
    }
    a.iter()
        .zip(b)
        .position(|(x, y)| x != y)
        .map(|i| format!("dim {i}"))
        .unwrap_or_else(|| "none".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_length() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn repeat_and_slice_channels() {
        let t = Tensor::from_fn_chw(1, 2, 2, |_, y, x| (y * 2 + x) as f64);
        let r = t.repeat_channels(3).unwrap();
        assert_eq!(r.shape(), &[3, 2, 2]);
        assert_eq!(r.channels(2, 1).unwrap(), t);
    }

    #[test]
    fn mismatch_names_axis() {
        let a = Tensor::zeros(&[3, 4, 4]);
        let b = Tensor::zeros(&[3, 4, 5]);
        let err = a.max_abs_diff(&b).unwrap_err().to_string();
        assert!(err.contains("dim 2"), "{err}");
    }
}
