//! Dense `f64` tensors with a small reverse-mode autodiff tape.
//!
//! Layout is always row-major. Feature maps are stored channel-major,
//! i.e. `[C, s0, s1(, s2)]`, which is the layout every convolution in the
//! crate expects.

mod gradcheck;
mod kernels;
mod tape;

pub use gradcheck::{grad_check, grad_check_many};
pub use kernels::ConvGeom;
pub use tape::{Gradients, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    Length { shape: Vec<usize>, len: usize },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("{0}")]
    Contract(String),
}

pub type TensorResult<T> = Result<T, TensorError>;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Checked constructor: the length must match and every value must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Self> {
        let t = Self::from_vec(shape, data)?;
        if let Some((index, &value)) = t.data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TensorError::NonFinite { index, value });
        }
        Ok(t)
    }

    /// Length-checked constructor that skips the finiteness scan.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Self> {
        if shape.contains(&0) || shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::Length {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        assert!(n > 0, "tensor extents must be positive: {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        assert!(n > 0, "tensor extents must be positive: {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Leading extent (channel count for feature maps).
    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    /// Extents after the leading channel axis.
    pub fn spatial(&self) -> &[usize] {
        &self.shape[1..]
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> TensorResult<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::Shape {
                op: "reshape",
                expected: self.shape,
                got: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Copy of channels `start..start + len` of a channel-major tensor.
    pub fn channel_slice(&self, start: usize, len: usize) -> TensorResult<Self> {
        let c = self.channels();
        if len == 0 || start + len > c {
            return Err(TensorError::Contract(format!(
                "channel slice {start}..{} out of range for {c} channels",
                start + len
            )));
        }
        let plane = self.len() / c;
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self {
            shape,
            data: self.data[start * plane..(start + len) * plane].to_vec(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub(crate) fn ensure_same_shape(&self, other: &Tensor, op: &'static str) -> TensorResult<()> {
        if self.shape != other.shape {
            return Err(TensorError::Shape {
                op,
                expected: self.shape.clone(),
                got: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// Forward evaluation of a zero-padded, shape-preserving convolution.
pub fn conv_same(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> TensorResult<Tensor> {
    let geom = ConvGeom::same(input.shape(), kernel.shape(), bias.shape())?;
    let mut col = Vec::new();
    Ok(geom.forward(input.data(), kernel.data(), bias.data(), &mut col))
}

/// Forward evaluation of an unpadded convolution (output shrinks by `k - 1` per axis).
pub fn conv_valid(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> TensorResult<Tensor> {
    let geom = ConvGeom::valid(input.shape(), kernel.shape(), bias.shape())?;
    let mut col = Vec::new();
    Ok(geom.forward(input.data(), kernel.data(), bias.data(), &mut col))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_constructor_rejects_nan_and_bad_length() {
        assert!(matches!(
            Tensor::new(vec![2], vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite { index: 1, .. })
        ));
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::Length { .. })
        ));
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }

    #[test]
    fn channel_slice_copies_planes() {
        let t = Tensor::from_fn(&[3, 2, 2], |i| i as f64);
        let s = t.channel_slice(1, 2).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.data(), &[4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
        assert!(t.channel_slice(2, 2).is_err());
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((sigmoid(800.0) - 1.0).abs() < 1e-300);
    }
}
