//! Trains a metadata model whose autoencoder was pretrained first, then
//! stores the compressed latent in a PNG text chunk and upscales from it.
//!
//! ```text
//! cargo run --release --example rescale_meta -- [iterations] [pretrain_steps]
//! ```

use invrescale::imageio::{decode_artifact, encode_artifact, PngPayload, LATENT_KEYWORD};
use invrescale::latent::{pretrain_ae, PretrainConfig};
use invrescale::metrics::evaluate;
use invrescale::model::{ModelConfig, RescaleModel, Variant};
use invrescale::synth::{toy_image, toy_set};
use invrescale::train::{train, LossWeights, TrainConfig};

fn main() -> invrescale::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations = args.first().and_then(|s| s.parse().ok()).unwrap_or(200);
    let steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);

    let mut model = RescaleModel::new(ModelConfig::new(Variant::Meta, 2).with_blocks(4), 0)?;
    if let Some(ae) = model.ae.as_mut() {
        let report = pretrain_ae(ae, &PretrainConfig { steps, ..PretrainConfig::default() })?;
        println!("autoencoder pretrained for {steps} steps, final loss {:.4}", report.final_loss());
    }
    let tc = TrainConfig { iterations, patch_size: 32, ..TrainConfig::default() };
    let report = train(&mut model, &toy_set(16, 96, 96, 0), &tc, &LossWeights::for_model(2, Variant::Meta))?;
    println!("joint training: mean loss {:.4} over the last 50 iterations", report.mean_total(iterations.saturating_sub(50), iterations));

    let test = toy_image(96, 96, 4242);
    let (artifact, z) = model.downscale(&test)?;
    let bytes = encode_artifact(&artifact)?;
    let payload = PngPayload::decode(&bytes)?;
    let chunk = payload.text_chunks.iter().find(|(k, _)| k == LATENT_KEYWORD).map_or(0, |(_, v)| v.len());
    println!("PNG {} bytes, {} channels, '{LATENT_KEYWORD}' chunk {chunk} base64 chars", bytes.len(), payload.channels);

    let stored = decode_artifact(&bytes)?;
    for (label, hr) in [
        ("decoded code", model.upscale(&stored, None)?),
        ("true latent", model.upscale(&stored, Some(&z))?),
        ("zero latent", model.upscale(&stored, Some(&invrescale::Tensor::zeros(z.shape().to_vec())))?),
    ] {
        let r = evaluate(&test, &hr.quantize_8bit(), 0)?;
        println!("{label:>12}: {:.2} dB, SSIM {:.4}", r.psnr_db, r.ssim);
    }
    Ok(())
}
