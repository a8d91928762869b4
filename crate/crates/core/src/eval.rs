//! Scoring pipelines shared by the command line, the examples and the tests.
//!
//! A model is scored exactly as its files would be: the artifact is encoded
//! to PNG bytes and decoded again before upscaling, and the reconstruction is
//! quantized to 8 bits before the metrics see it.

use crate::error::Result;
use crate::image::PlanarImage;
use crate::imageio::{decode_artifact, encode_artifact};
use crate::metrics::{bicubic_downscale, bicubic_upscale, evaluate, MetricReport};
use crate::model::RescaleModel;

/// Reconstruction after a full downscale, PNG, upscale, 8-bit cycle.
pub fn roundtrip(model: &RescaleModel, hr: &PlanarImage) -> Result<PlanarImage> {
    let (artifact, _) = model.downscale(hr)?;
    let stored = decode_artifact(&encode_artifact(&artifact)?)?;
    Ok(model.upscale(&stored, None)?.quantize_8bit())
}

/// Bicubic down then up, quantized at both ends.
pub fn bicubic_roundtrip(hr: &PlanarImage, scale: usize) -> Result<PlanarImage> {
    let lr = bicubic_downscale(hr, scale)?.quantize_8bit();
    Ok(bicubic_upscale(&lr, scale)?.quantize_8bit())
}

/// Scores every image after cropping it to the model's required multiple.
pub fn score_model(model: &RescaleModel, images: &[PlanarImage], crop_border: usize) -> Result<Vec<MetricReport>> {
    images
        .iter()
        .map(|img| {
            let hr = img.crop_to_multiple(model.config.required_multiple())?;
            evaluate(&hr, &roundtrip(model, &hr)?, crop_border)
        })
        .collect()
}

pub fn score_bicubic(images: &[PlanarImage], scale: usize, crop_border: usize) -> Result<Vec<MetricReport>> {
    images
        .iter()
        .map(|img| {
            let hr = img.crop_to_multiple(scale)?;
            evaluate(&hr, &bicubic_roundtrip(&hr, scale)?, crop_border)
        })
        .collect()
}

pub fn mean_psnr(scores: &[MetricReport]) -> f64 {
    scores.iter().map(|s| s.psnr_db).sum::<f64>() / scores.len().max(1) as f64
}

pub fn mean_ssim(scores: &[MetricReport]) -> f64 {
    scores.iter().map(|s| s.ssim).sum::<f64>() / scores.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use crate::synth::toy_set;

    #[test]
    fn fresh_models_score_finite() {
        let imgs = toy_set(2, 36, 36, 0);
        for v in [Variant::Baseline, Variant::Alpha] {
            let m = RescaleModel::new(ModelConfig::new(v, 2).with_blocks(1).with_width(4), 0).unwrap();
            let s = score_model(&m, &imgs, 0).unwrap();
            assert_eq!(s.len(), 2);
            assert!(s.iter().all(|r| r.psnr_db.is_finite() && r.psnr_db > 10.0));
        }
        let b = score_bicubic(&imgs, 2, 2).unwrap();
        assert!(mean_psnr(&b) > 15.0 && mean_ssim(&b) <= 1.0);
    }
}
