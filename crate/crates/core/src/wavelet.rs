//! Single-level orthonormal Haar transform, `(C, H, W)` ↔ `(4C, H/2, W/2)`.
//!
//! For every 2×2 block `[[a, b], [c, d]]` of every input channel:
//!
//! ```text
//! LL = (a + b + c + d) / 2      V = (a + b - c - d) / 2
//! H  = (a - b + c - d) / 2      D = (a - b - c + d) / 2
//! ```
//!
//! Output channels are grouped as `[LL × C, V × C, H × C, D × C]`, so the first
//! `C` channels are the low-frequency image and the remaining `3C` carry the
//! vertical, horizontal and diagonal detail in that order. The transform is
//! orthonormal, which makes it its own adjoint's inverse and keeps energy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Low/high split of a Haar-transformed tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarStack {
    /// `(C, H/2, W/2)` low-frequency sub-band.
    pub low: Tensor,
    /// `(3C, H/2, W/2)` detail sub-bands: vertical, horizontal, diagonal.
    pub high: Tensor,
}

impl HaarStack {
    /// Splits a `(4C, h, w)` coefficient tensor.
    pub fn from_coefficients(t: &Tensor) -> Result<Self> {
        let (c4, _, _) = t.dims3()?;
        if c4 % 4 != 0 {
            return Err(Error::invalid(format!("Haar stack needs 4C channels, got {c4}")));
        }
        let c = c4 / 4;
        Ok(Self { low: t.channels(0, c)?, high: t.channels(c, 3 * c)? })
    }

    pub fn to_coefficients(&self) -> Result<Tensor> {
        Tensor::concat_channels(&[&self.low, &self.high])
    }

    /// Number of image channels `C`.
    pub fn image_channels(&self) -> usize {
        self.low.shape()[0]
    }
}

pub fn haar_forward(x: &Tensor) -> Result<HaarStack> {
    let (c, h, w) = x.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!("Haar transform needs even extents, got ({h},{w})")));
    }
    let coeffs = Tensor::new(vec![4 * c, h / 2, w / 2], haar_forward_raw(x.data(), c, h, w))?;
    HaarStack::from_coefficients(&coeffs)
}

pub fn haar_inverse(s: &HaarStack) -> Result<Tensor> {
    let coeffs = s.to_coefficients()?;
    let (c4, h, w) = coeffs.dims3()?;
    if c4 % 4 != 0 || s.high.shape()[0] != 3 * s.image_channels() {
        return Err(Error::invalid(format!(
            "Haar inverse needs C low and 3C high channels, got {} and {}",
            s.low.shape()[0],
            s.high.shape()[0]
        )));
    }
    Tensor::new(vec![c4 / 4, 2 * h, 2 * w], haar_inverse_raw(coeffs.data(), c4 / 4, h, w))
}

pub(crate) fn haar_forward_raw(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let plane = oh * ow;
    let mut out = vec![0.0f32; 4 * c * plane];
    for ci in 0..c {
        let src = &x[ci * h * w..(ci + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let a = src[2 * y * w + 2 * xx];
                let b = src[2 * y * w + 2 * xx + 1];
                let cc = src[(2 * y + 1) * w + 2 * xx];
                let d = src[(2 * y + 1) * w + 2 * xx + 1];
                let o = y * ow + xx;
                out[ci * plane + o] = (a + b + cc + d) * 0.5;
                out[(c + ci) * plane + o] = (a + b - cc - d) * 0.5;
                out[(2 * c + ci) * plane + o] = (a - b + cc - d) * 0.5;
                out[(3 * c + ci) * plane + o] = (a - b - cc + d) * 0.5;
            }
        }
    }
    out
}

pub(crate) fn haar_inverse_raw(s: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (2 * h, 2 * w);
    let plane = h * w;
    let mut out = vec![0.0f32; c * oh * ow];
    for ci in 0..c {
        let dst = &mut out[ci * oh * ow..(ci + 1) * oh * ow];
        for y in 0..h {
            for xx in 0..w {
                let o = y * w + xx;
                let ll = s[ci * plane + o];
                let v = s[(c + ci) * plane + o];
                let hd = s[(2 * c + ci) * plane + o];
                let d = s[(3 * c + ci) * plane + o];
                dst[2 * y * ow + 2 * xx] = (ll + v + hd + d) * 0.5;
                dst[2 * y * ow + 2 * xx + 1] = (ll + v - hd - d) * 0.5;
                dst[(2 * y + 1) * ow + 2 * xx] = (ll - v + hd - d) * 0.5;
                dst[(2 * y + 1) * ow + 2 * xx + 1] = (ll - v - hd + d) * 0.5;
            }
        }
    }
    out
}
