//! Shows the alpha pre-split: one detail channel is dropped and rebuilt from
//! the appended mean plane.

use invrescale::invnet::{recover_removed_channel, split_channels, SplitMode, SplitSpec};
use invrescale::synth::toy_image;
use invrescale::wavelet::haar_forward;

fn main() -> invrescale::Result<()> {
    let bands = haar_forward(toy_image(48, 48, 2).tensor())?;
    let spec = SplitSpec::new(SplitMode::PreSplitAlpha, true, 3);
    let split = split_channels(&bands, &spec)?;
    println!(
        "low branch {:?} (RGB + alpha), high branch {:?}, dropped detail channel {:?}",
        split.x_l.shape(),
        split.x_h.shape(),
        split.removed_channel_index
    );

    let alpha = split.x_l.channels(3, 1)?;
    let rebuilt = recover_removed_channel(&alpha, &split.x_h, 3)?;
    let dropped = bands.high.channels(0, 1)?;
    println!("rebuilt channel error {:.2e}", rebuilt.max_abs_diff(&dropped));

    // A coarse copy of alpha, as if read back from an 8-bit file, is amplified 9x.
    let coarse = alpha.map(|a| (a * 64.0).round() / 64.0);
    let rough = recover_removed_channel(&coarse, &split.x_h, 3)?;
    println!(
        "alpha perturbed by {:.2e} -> rebuilt channel off by {:.2e}",
        coarse.max_abs_diff(&alpha),
        rough.max_abs_diff(&dropped)
    );
    Ok(())
}
