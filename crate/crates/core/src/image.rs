use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `(C, H, W)` image with samples nominally in `[0, 1]`.
///
/// Network outputs may stray outside the unit range; values are only clamped
/// when quantized to 8 bits.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarImage(Tensor);

impl PlanarImage {
    pub fn new(t: Tensor) -> Result<Self> {
        t.dims3()?;
        Ok(Self(t))
    }

    pub fn from_planes(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Tensor::new(vec![channels, height, width], data)?)
    }

    pub fn channels(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        self.0.channel(c)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Copies the window `[y, y+h) × [x, x+w)` of every channel.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y + h > self.height() || x + w > self.width() {
            return Err(Error::invalid(format!(
                "crop {h}x{w} at ({y},{x}) outside {}x{}",
                self.height(),
                self.width()
            )));
        }
        let mut data = Vec::with_capacity(self.channels() * h * w);
        for c in 0..self.channels() {
            let p = self.plane(c);
            for row in y..y + h {
                data.extend_from_slice(&p[row * self.width() + x..row * self.width() + x + w]);
            }
        }
        Self::from_planes(self.channels(), h, w, data)
    }

    /// Largest top-left crop whose extents are multiples of `m`.
    pub fn crop_to_multiple(&self, m: usize) -> Result<Self> {
        let (h, w) = (self.height() / m * m, self.width() / m * m);
        if h == self.height() && w == self.width() {
            return Ok(self.clone());
        }
        self.crop(0, 0, h, w)
    }

    pub fn flip_horizontal(&self) -> Self {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let src = self.0.data();
        let t = Tensor::from_fn(vec![c, h, w], |i| {
            let x = i % w;
            src[i - x + (w - 1 - x)]
        });
        Self(t)
    }

    pub fn flip_vertical(&self) -> Self {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let src = self.0.data();
        let t = Tensor::from_fn(vec![c, h, w], |i| {
            let x = i % w;
            let y = (i / w) % h;
            let ci = i / (w * h);
            src[(ci * h + (h - 1 - y)) * w + x]
        });
        Self(t)
    }

    /// Rounds every sample to the nearest of 256 levels, `round(x·255)/255` clamped.
    pub fn quantize_8bit(&self) -> Self {
        Self(self.0.map(|v| f32::from(to_u8(v)) / 255.0))
    }

    pub fn to_u8_interleaved(&self) -> Vec<u8> {
        let (c, h, w) = (self.channels(), self.height(), self.width());
        let mut out = Vec::with_capacity(c * h * w);
        for i in 0..h * w {
            for ch in 0..c {
                out.push(to_u8(self.plane(ch)[i]));
            }
        }
        out
    }

    pub fn from_u8_interleaved(channels: usize, height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "{} bytes for a {channels}x{height}x{width} image",
                bytes.len()
            )));
        }
        let t = Tensor::from_fn(vec![channels, height, width], |i| {
            let c = i / (height * width);
            let p = i % (height * width);
            f32::from(bytes[p * channels + c]) / 255.0
        });
        Ok(Self(t))
    }
}

/// `round(x·255)` clamped to `[0, 255]`.
pub fn to_u8(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}
