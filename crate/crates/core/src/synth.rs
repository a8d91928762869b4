//! Procedural toy images for smoke tests and desk-scale training runs.
//!
//! Each image layers a smooth colour gradient, a few soft-edged discs and
//! rectangles, oriented stripes and fine noise, so every Haar band carries
//! energy.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::PlanarImage;
use crate::imageio::write_rgb;
use crate::tensor::Tensor;

/// One toy image, deterministic in `seed`.
pub fn toy_image(height: usize, width: usize, seed: u64) -> PlanarImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f32, width as f32);
    let mut planes = vec![0.0f32; 3 * height * width];

    let base: [[f32; 3]; 2] = [rng.gen(), rng.gen()];
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    for y in 0..height {
        for x in 0..width {
            let t = ((x as f32 / wf - 0.5) * ca + (y as f32 / hf - 0.5) * sa + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                planes[(c * height + y) * width + x] = base[0][c] * (1.0 - t) + base[1][c] * t;
            }
        }
    }

    for _ in 0..rng.gen_range(2..5) {
        let colour: [f32; 3] = rng.gen();
        let (cy, cx) = (rng.gen_range(0.0..hf), rng.gen_range(0.0..wf));
        let r = rng.gen_range(0.1..0.35) * hf.min(wf);
        let square = rng.gen_bool(0.4);
        for y in 0..height {
            for x in 0..width {
                let (dy, dx) = (y as f32 - cy, x as f32 - cx);
                let d = if square { dy.abs().max(dx.abs()) } else { (dy * dy + dx * dx).sqrt() };
                let cover = (r - d + 0.5).clamp(0.0, 1.0);
                if cover > 0.0 {
                    for c in 0..3 {
                        let p = &mut planes[(c * height + y) * width + x];
                        *p = *p * (1.0 - cover) + colour[c] * cover;
                    }
                }
            }
        }
    }

    let period = rng.gen_range(2.5..8.0f32);
    let (sc, ss) = {
        let a: f32 = rng.gen_range(0.0..std::f32::consts::PI);
        (a.cos(), a.sin())
    };
    let amp = rng.gen_range(0.05..0.15f32);
    for y in 0..height {
        for x in 0..width {
            let s = amp * ((x as f32 * sc + y as f32 * ss) * std::f32::consts::TAU / period).sin();
            let n = rng.gen_range(-0.03..0.03f32);
            for c in 0..3 {
                let p = &mut planes[(c * height + y) * width + x];
                *p = (*p + s + n).clamp(0.0, 1.0);
            }
        }
    }
    PlanarImage::new(Tensor::new(vec![3, height, width], planes).expect("sizes match"))
        .expect("three dimensions")
        .quantize_8bit()
}

/// `count` toy images with seeds `seed, seed+1, ...`.
pub fn toy_set(count: usize, height: usize, width: usize, seed: u64) -> Vec<PlanarImage> {
    (0..count as u64).map(|i| toy_image(height, width, seed.wrapping_add(i))).collect()
}

/// Writes a toy set as `toy_000.png`, `toy_001.png`, ... and returns the paths.
pub fn write_toy_set(dir: &Path, count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    toy_set(count, height, width, seed)
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = dir.join(format!("toy_{i:03}.png"));
            write_rgb(img, &p)?;
            Ok(p)
        })
        .collect()
}
