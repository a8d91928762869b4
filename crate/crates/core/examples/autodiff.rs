//! Differentiates a small expression on the tape and compares the gradient
//! with central differences.

use invrescale::tensor::{Tape, Tensor};

fn loss(x: &Tensor, w: &Tensor, b: &Tensor) -> invrescale::Result<(f32, Option<Tensor>)> {
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone());
    let wv = tape.constant(w.clone());
    let bv = tape.constant(b.clone());
    let y = tape.conv2d(xv, wv, bv)?;
    let y = tape.leaky_relu(y, 0.2)?;
    let y = tape.haar_forward(y)?;
    let y = tape.square(y)?;
    let l = tape.mean(y)?;
    let value = tape.value(l).item();
    let grads = tape.backward(l)?;
    Ok((value, grads.get(xv).cloned()))
}

fn main() -> invrescale::Result<()> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::randn(vec![2, 4, 4], 1.0, &mut rng);
    let w = Tensor::randn(vec![3, 2, 3, 3], 0.5, &mut rng);
    let b = Tensor::randn(vec![3], 0.1, &mut rng);

    let (value, grad) = loss(&x, &w, &b)?;
    let grad = grad.expect("x is a variable");
    println!("loss {value:.5}");
    let h = 1e-2;
    for i in [0, 5, 17, 31] {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let fd = (loss(&plus, &w, &b)?.0 - loss(&minus, &w, &b)?.0) / (2.0 * h);
        println!("dL/dx[{i:2}]  tape {:+.5}  difference {:+.5}", grad.data()[i], fd);
    }
    Ok(())
}
