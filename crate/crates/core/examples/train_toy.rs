//! Trains a small rescaling model on procedural images and reports held-out PSNR.
//!
//! ```text
//! cargo run --release --example train_toy -- [baseline|alpha|meta] [iterations] [scale]
//! ```

use std::time::Instant;

use invrescale::eval::score_model;
use invrescale::model::{ModelConfig, RescaleModel, Variant};
use invrescale::synth::toy_set;
use invrescale::train::{train, LossWeights, TrainConfig};

fn main() -> invrescale::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: Variant = args.first().map_or(Ok(Variant::Alpha), |s| s.parse())?;
    let iterations = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let scale = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(2);

    let train_set = toy_set(16, 96, 96, 0);
    let held_out = toy_set(4, 96, 96, 1000);

    let mut model = RescaleModel::new(ModelConfig::new(variant, scale).with_blocks(4), 0)?;
    let tc = TrainConfig { iterations, patch_size: 32, log_every: 50, ..TrainConfig::default() };
    let start = Instant::now();
    let report = train(&mut model, &train_set, &tc, &LossWeights::for_model(scale, variant))?;
    let secs = start.elapsed().as_secs_f64();
    for r in report.records.iter().filter(|r| r.iteration % 50 == 0) {
        println!("iter {:5}  total {:.5}  L_r {:.5}  L_g {:.5}  L_d {:.5}", r.iteration, r.total, r.l_r, r.l_g, r.l_d);
    }
    println!("{iterations} iterations in {secs:.1}s ({:.3}s/iter)", secs / iterations as f64);

    let scores = score_model(&model, &held_out, 0)?;
    let mean = scores.iter().map(|s| s.psnr_db).sum::<f64>() / scores.len() as f64;
    println!("{variant} x{scale}: held-out Y-PSNR {mean:.2} dB");
    Ok(())
}
