//! Scores bicubic down/up-scaling of procedural images on the Y channel.

use invrescale::eval::{mean_psnr, mean_ssim, score_bicubic};
use invrescale::metrics::{bicubic_downscale, bicubic_upscale, evaluate};
use invrescale::synth::toy_set;

fn main() -> invrescale::Result<()> {
    let images = toy_set(4, 96, 96, 5);
    for scale in [2, 4] {
        let scores = score_bicubic(&images, scale, scale)?;
        println!("bicubic x{scale}: Y-PSNR {:.2} dB, SSIM {:.4}", mean_psnr(&scores), mean_ssim(&scores));
    }
    let lr = bicubic_downscale(&images[0], 2)?;
    let up = bicubic_upscale(&lr, 2)?;
    let r = evaluate(&images[0], &up, 0)?;
    println!("image 0 x2 without border crop: {:.2} dB / {:.4}", r.psnr_db, r.ssim);
    println!("identical images: {:?}", evaluate(&images[0], &images[0], 0)?);
    Ok(())
}
