//! Downscales an image to an RGBA PNG with a short-trained alpha model, reads
//! it back and upscales it, next to the zero-latent baseline and bicubic.
//!
//! ```text
//! cargo run --release --example rescale_alpha -- [iterations] [out_dir]
//! ```

use std::path::PathBuf;

use invrescale::imageio::{read_artifact, write_artifact, write_rgb};
use invrescale::metrics::{bicubic_downscale, bicubic_upscale, evaluate};
use invrescale::model::{ModelConfig, RescaleModel, Variant};
use invrescale::synth::{toy_image, toy_set};
use invrescale::train::{train, LossWeights, TrainConfig};

fn main() -> invrescale::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations = args.first().and_then(|s| s.parse().ok()).unwrap_or(300);
    let out_dir = args.get(1).map_or_else(std::env::temp_dir, PathBuf::from);
    let images = toy_set(16, 96, 96, 0);
    let test = toy_image(96, 96, 4242);
    let tc = TrainConfig { iterations, patch_size: 32, ..TrainConfig::default() };

    for variant in [Variant::Baseline, Variant::Alpha] {
        let mut model = RescaleModel::new(ModelConfig::new(variant, 2).with_blocks(4), 0)?;
        train(&mut model, &images, &tc, &LossWeights::for_model(2, variant))?;
        let (artifact, _) = model.downscale(&test)?;
        let path = out_dir.join(format!("toy_{variant}_lr.png"));
        write_artifact(&artifact, &path)?;
        let stored = read_artifact(&path)?;
        let hr = model.upscale(&stored, None)?.quantize_8bit();
        write_rgb(&hr, &out_dir.join(format!("toy_{variant}_hr.png")))?;
        let r = evaluate(&test, &hr, 0)?;
        println!("{variant:>8}: {} ({} bytes) -> {:.2} dB, SSIM {:.4}", path.display(), std::fs::metadata(&path)?.len(), r.psnr_db, r.ssim);
    }
    let bic = bicubic_upscale(&bicubic_downscale(&test, 2)?.quantize_8bit(), 2)?.quantize_8bit();
    let r = evaluate(&test, &bic, 0)?;
    println!(" bicubic: {:.2} dB, SSIM {:.4}", r.psnr_db, r.ssim);
    Ok(())
}
