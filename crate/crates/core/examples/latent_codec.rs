//! Pretrains the latent autoencoder briefly and round-trips a code through
//! its 8-bit byte layout.
//!
//! ```text
//! cargo run --release --example latent_codec -- [steps]
//! ```

use invrescale::latent::{dequantize_code, pretrain_ae, quantize_code, AeConfig, Autoencoder, PretrainConfig, QuantizedCode};
use invrescale::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> invrescale::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut ae = Autoencoder::new(AeConfig::default(), 9, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let z = Tensor::randn(vec![9, 64, 64], 1.0, &mut rng);

    println!("reconstruction MSE at init {:.4}", ae.reconstruction_mse(&z)?);
    let report = pretrain_ae(&mut ae, &PretrainConfig { steps, ..PretrainConfig::default() })?;
    println!("after {steps} steps: train loss {:.4}, held-out MSE {:.4}", report.final_loss(), ae.reconstruction_mse(&z)?);

    let code = ae.encode(&z, 1)?;
    let q = quantize_code(&code)?;
    let bytes = q.to_bytes();
    let parsed = QuantizedCode::from_bytes(&bytes)?;
    let back = dequantize_code(&parsed)?;
    println!(
        "code {:?} -> {} bytes, range [{:.3}, {:.3}], max dequantization error {:.2e} (step {:.2e})",
        code.s.shape(),
        bytes.len(),
        q.min,
        q.max,
        back.s.max_abs_diff(&code.s),
        (q.max - q.min) / 256.0
    );
    Ok(())
}
