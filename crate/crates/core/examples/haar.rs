//! Splits an image into Haar sub-bands and puts it back together.
//!
//! ```text
//! cargo run --release --example haar
//! ```

use invrescale::synth::toy_image;
use invrescale::wavelet::{haar_forward, haar_inverse};

fn main() -> invrescale::Result<()> {
    let img = toy_image(64, 64, 7);
    let x = img.tensor();
    let bands = haar_forward(x)?;
    println!("input {:?} -> low {:?}, high {:?}", x.shape(), bands.low.shape(), bands.high.shape());

    let names = ["vertical", "horizontal", "diagonal"];
    for (i, name) in names.iter().enumerate() {
        let energy = bands.high.channels(3 * i, 3)?.sum_sq();
        println!("{name:>10} detail energy {energy:.3}");
    }
    println!("       low band energy {:.3}", bands.low.sum_sq());
    println!("         input energy {:.3}", x.sum_sq());

    let back = haar_inverse(&bands)?;
    println!("max reconstruction error {:.2e}", back.max_abs_diff(x));
    Ok(())
}
