//! Bicubic resampling, BT.601 luma and the PSNR/SSIM fidelity metrics.
//!
//! Resampling follows the usual `imresize` conventions: pixel centres map as
//! `u = (i + 0.5) / s - 0.5`, the kernel is stretched by `1/s` when shrinking
//! so that it low-passes, taps are normalized to sum to one, and indices
//! outside the image clamp to the edge.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::tensor::Tensor;

/// Cubic convolution parameter.
pub const BICUBIC_A: f64 = -0.5;
/// Reported PSNR for identical inputs.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn cubic_kernel(x: f64) -> f64 {
    let a = BICUBIC_A;
    let t = x.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Sparse resampling matrix along one axis: for each output index, the
/// `(input index, weight)` taps.
fn axis_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let s = n_out as f64 / n_in as f64;
    let stretch = if s < 1.0 { s } else { 1.0 };
    let support = 2.0 / stretch;
    (0..n_out)
        .map(|i| {
            let u = (i as f64 + 0.5) / s - 0.5;
            let lo = (u - support).floor() as isize;
            let hi = (u + support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::new();
            for j in lo..=hi {
                let w = stretch * cubic_kernel(stretch * (u - j as f64));
                if w == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, n_in as isize - 1) as usize;
                match taps.iter_mut().find(|(k, _)| *k == idx) {
                    Some(t) => t.1 += w,
                    None => taps.push((idx, w)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Resizes every channel to `out_h × out_w`. Equal extents return the input unchanged.
pub fn bicubic_resize(img: &PlanarImage, out_h: usize, out_w: usize) -> Result<PlanarImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("resize target {out_h}x{out_w} is empty")));
    }
    let (c, h, w) = (img.channels(), img.height(), img.width());
    if (out_h, out_w) == (h, w) {
        return Ok(img.clone());
    }
    let wy = axis_weights(h, out_h);
    let wx = axis_weights(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut rows = vec![0.0f64; h * out_w];
    for ch in 0..c {
        let p = img.plane(ch);
        for y in 0..h {
            for (x, taps) in wx.iter().enumerate() {
                rows[y * out_w + x] = taps.iter().map(|&(j, wt)| wt * f64::from(p[y * w + j])).sum();
            }
        }
        for taps in &wy {
            for x in 0..out_w {
                let v: f64 = taps.iter().map(|&(j, wt)| wt * rows[j * out_w + x]).sum();
                out.push(v as f32);
            }
        }
    }
    PlanarImage::from_planes(c, out_h, out_w, out)
}

/// Bicubic downscale by an integer factor.
pub fn bicubic_downscale(img: &PlanarImage, factor: usize) -> Result<PlanarImage> {
    if factor == 0 || !img.height().is_multiple_of(factor) || !img.width().is_multiple_of(factor) {
        return Err(Error::invalid(format!(
            "{}x{} is not divisible by {factor}",
            img.height(),
            img.width()
        )));
    }
    bicubic_resize(img, img.height() / factor, img.width() / factor)
}

pub fn bicubic_upscale(img: &PlanarImage, factor: usize) -> Result<PlanarImage> {
    if factor == 0 {
        return Err(Error::invalid("upscale factor must be positive"));
    }
    bicubic_resize(img, img.height() * factor, img.width() * factor)
}

/// A single-channel `f64` plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!("{} samples for a {height}x{width} plane", data.len())));
        }
        Ok(Self { height, width, data })
    }

    /// Drops `b` pixels from every edge.
    pub fn crop_border(&self, b: usize) -> Result<Self> {
        if b == 0 {
            return Ok(self.clone());
        }
        if 2 * b >= self.height || 2 * b >= self.width {
            return Err(Error::invalid(format!("border {b} leaves nothing of {}x{}", self.height, self.width)));
        }
        let (h, w) = (self.height - 2 * b, self.width - 2 * b);
        let data = (b..b + h).flat_map(|y| self.data[y * self.width + b..y * self.width + b + w].iter().copied()).collect();
        Self::new(h, w, data)
    }
}

/// Studio-swing BT.601 luma in `[16/255, 235/255]`.
pub fn to_luma(img: &PlanarImage) -> Result<Plane> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!("luma needs RGB, got {} channels", img.channels())));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..r.len())
        .map(|i| {
            (65.481 * f64::from(r[i]) + 128.553 * f64::from(g[i]) + 24.966 * f64::from(b[i]) + 16.0) / 255.0
        })
        .collect();
    Plane::new(img.height(), img.width(), data)
}

fn check_same(a: &Plane, b: &Plane) -> Result<()> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::invalid(format!(
            "plane shapes differ: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    Ok(())
}

/// PSNR in dB for planes on a unit peak, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Plane, b: &Plane) -> Result<f64> {
    check_same(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering with the 1-D window `g`.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| g[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11×11 Gaussian windows, dynamic range 1.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    check_same(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    let (h, w) = (a.height, a.width);
    let g = gaussian_window();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(&a.data, h, w, &g);
    let mu_b = filter_valid(&b.data, h, w, &g);
    let aa = filter_valid(&prod(&|x, _| x * x), h, w, &g);
    let bb = filter_valid(&prod(&|_, y| y * y), h, w, &g);
    let ab = filter_valid(&prod(&|x, y| x * y), h, w, &g);
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Y-channel PSNR and SSIM of `test` against `reference`, after dropping
/// `crop_border` pixels from each edge.
pub fn evaluate(reference: &PlanarImage, test: &PlanarImage, crop_border: usize) -> Result<MetricReport> {
    let a = to_luma(reference)?.crop_border(crop_border)?;
    let b = to_luma(test)?.crop_border(crop_border)?;
    Ok(MetricReport { psnr_db: psnr(&a, &b)?, ssim: ssim(&a, &b)? })
}

/// Converts a luma plane to a one-channel image (for writing previews).
pub fn plane_to_image(p: &Plane) -> Result<PlanarImage> {
    PlanarImage::new(Tensor::new(vec![1, p.height, p.width], p.data.iter().map(|&v| v as f32).collect())?)
}
