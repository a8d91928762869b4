//! Dense `f32` tensors, a define-by-run gradient tape, and the Adam optimizer.
//!
//! A [`Tensor`] is a plain value: a shape and a row-major buffer. Network math
//! runs on a [`Tape`], which records every operation so that
//! [`Tape::backward`] can produce gradients for the leaves that asked for
//! them. Images and activations are laid out as `(C, H, W)`.

mod kernels;
mod optim;
mod tape;

pub use kernels::{pixel_shuffle_raw, pixel_unshuffle_raw};
pub use optim::{adam_step, Adam, AdamConfig, Bound, ParamId, ParamStore, Parameter};
pub use tape::{sigmoid, Gradients, Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::invalid(format!("shape {shape:?} must have positive extents")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self::new(shape, vec![value; len]).expect("full: shape must have positive extents")
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn scalar(value: f32) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f32) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self::new(shape, (0..len).map(&mut f).collect()).expect("from_fn: invalid shape")
    }

    /// Standard normal samples scaled by `std`.
    pub fn randn(shape: impl Into<Vec<usize>>, std: f32, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| {
            let v: f32 = StandardNormal.sample(rng);
            v * std
        })
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn uniform(shape: impl Into<Vec<usize>>, lo: f32, hi: f32, rng: &mut impl Rng) -> Self {
        Self::from_fn(shape, |_| rng.gen_range(lo..hi))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// `(C, H, W)` extents, or an error when the tensor is not 3-D.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::invalid(format!("expected a (C,H,W) tensor, got shape {:?}", self.shape))),
        }
    }

    /// One channel plane of a `(C, H, W)` tensor.
    pub fn channel(&self, c: usize) -> &[f32] {
        let (_, h, w) = self.dims3().expect("channel: tensor must be 3-D");
        &self.data[c * h * w..(c + 1) * h * w]
    }

    /// Channels `[start, start + len)` of a `(C, H, W)` tensor.
    pub fn channels(&self, start: usize, len: usize) -> Result<Tensor> {
        let (c, h, w) = self.dims3()?;
        if len == 0 || start + len > c {
            return Err(Error::invalid(format!("channel range {start}..{} out of 0..{c}", start + len)));
        }
        let plane = h * w;
        Tensor::new(vec![len, h, w], self.data[start * plane..(start + len) * plane].to_vec())
    }

    /// Concatenates `(C_i, H, W)` tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let (_, h, w) = first.dims3()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.dims3()?;
            if (ph, pw) != (h, w) {
                return Err(Error::invalid(format!(
                    "concat spatial mismatch: ({h},{w}) vs ({ph},{pw})"
                )));
            }
            channels += c;
            data.extend_from_slice(&p.data);
        }
        Tensor::new(vec![channels, h, w], data)
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff: shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v) * f64::from(v)).sum()
    }

    pub(crate) fn same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "{op}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}
