//! Runs a stack of affine coupling blocks forward and backward.
//!
//! Blocks start as the identity; random noise on the parameters makes the map
//! non-trivial while keeping it exactly invertible.

use invrescale::invnet::BlockStack;
use invrescale::synth::toy_image;
use invrescale::wavelet::haar_forward;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> invrescale::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bands = haar_forward(toy_image(32, 32, 1).tensor())?;
    for depth in [1, 4, 8] {
        let mut stack = BlockStack::new(3, 9, depth, 32, &mut rng);
        let (id_l, _) = stack.forward(&bands.low, &bands.high)?;
        stack.perturb(0.02, &mut rng);
        let (y_l, y_h) = stack.forward(&bands.low, &bands.high)?;
        let (x_l, x_h) = stack.inverse(&y_l, &y_h)?;
        let err = x_l.max_abs_diff(&bands.low).max(x_h.max_abs_diff(&bands.high));
        println!(
            "depth {depth}: fresh stack moves low band by {:.1e}, perturbed by {:.3}, inverse error {err:.2e}",
            id_l.max_abs_diff(&bands.low),
            y_l.max_abs_diff(&bands.low)
        );
    }
    Ok(())
}
