//! Independent `f64` reference implementations used as test oracles.
//!
//! Nothing here calls into the library's numeric kernels: every operation is
//! written directly from its definition, per output sample.
#![allow(dead_code)]

use invrescale::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct T64 {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl T64 {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self { shape: t.shape().to_vec(), data: t.data().iter().map(|&v| f64::from(v)).collect() }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn dims3(&self) -> (usize, usize, usize) {
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let (_, h, w) = self.dims3();
        self.data[(c * h + y) * w + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip(&self, o: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, o.shape);
        Self { shape: self.shape.clone(), data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn channels(&self, start: usize, len: usize) -> Self {
        let (_, h, w) = self.dims3();
        Self { shape: vec![len, h, w], data: self.data[start * h * w..(start + len) * h * w].to_vec() }
    }

    pub fn concat(parts: &[&T64]) -> Self {
        let (_, h, w) = parts[0].dims3();
        let c = parts.iter().map(|p| p.shape[0]).sum();
        Self { shape: vec![c, h, w], data: parts.iter().flat_map(|p| p.data.iter().copied()).collect() }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

thread_local! {
    static KINKS: std::cell::RefCell<Vec<bool>> = const { std::cell::RefCell::new(Vec::new()) };
}

/// Records which side of a non-differentiable point `x` lies on.
fn note_side(x: f64) {
    KINKS.with(|k| k.borrow_mut().push(x > 0.0));
}

/// Runs `f` and returns its value with the sides of every kink it crossed.
pub fn with_kinks<T>(f: impl FnOnce() -> T) -> (T, Vec<bool>) {
    KINKS.with(|k| k.borrow_mut().clear());
    let v = f();
    (v, KINKS.with(|k| std::mem::take(&mut *k.borrow_mut())))
}

pub fn leaky(x: f64, s: f64) -> f64 {
    note_side(x);
    if x > 0.0 {
        x
    } else {
        s * x
    }
}

/// Same-padded 3×3 (or any odd k) cross-correlation.
pub fn conv(x: &T64, w: &T64, b: &T64) -> T64 {
    let (c, h, wd) = x.dims3();
    let (o, k) = (w.shape[0], w.shape[2]);
    assert_eq!(w.shape[1], c);
    let r = (k / 2) as isize;
    let mut out = T64::zeros(&[o, h, wd]);
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..wd {
                let mut acc = b.data[oc];
                for ic in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - r;
                            let sx = xx as isize + kx as isize - r;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                continue;
                            }
                            acc += w.data[((oc * c + ic) * k + ky) * k + kx] * x.at(ic, sy as usize, sx as usize);
                        }
                    }
                }
                out.data[(oc * h + y) * wd + xx] = acc;
            }
        }
    }
    out
}

/// `[LL, V, H, D]` channel groups from each 2×2 block `[[a, b], [c, d]]`.
pub fn haar_fwd(x: &T64) -> T64 {
    let (c, h, w) = x.dims3();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = T64::zeros(&[4 * c, oh, ow]);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let a = x.at(ch, 2 * y, 2 * xx);
                let b = x.at(ch, 2 * y, 2 * xx + 1);
                let cc = x.at(ch, 2 * y + 1, 2 * xx);
                let d = x.at(ch, 2 * y + 1, 2 * xx + 1);
                let bands = [(a + b + cc + d) / 2.0, (a + b - cc - d) / 2.0, (a - b + cc - d) / 2.0, (a - b - cc + d) / 2.0];
                for (g, v) in bands.iter().enumerate() {
                    out.data[((g * c + ch) * oh + y) * ow + xx] = *v;
                }
            }
        }
    }
    out
}

pub fn haar_inv(s: &T64) -> T64 {
    let (c4, h, w) = s.dims3();
    let c = c4 / 4;
    let mut out = T64::zeros(&[c, 2 * h, 2 * w]);
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let ll = s.at(ch, y, xx);
                let v = s.at(c + ch, y, xx);
                let hh = s.at(2 * c + ch, y, xx);
                let d = s.at(3 * c + ch, y, xx);
                let px = [(ll + v + hh + d) / 2.0, (ll + v - hh - d) / 2.0, (ll - v + hh - d) / 2.0, (ll - v - hh + d) / 2.0];
                for (i, val) in px.iter().enumerate() {
                    out.data[(ch * 2 * h + 2 * y + i / 2) * 2 * w + 2 * xx + i % 2] = *val;
                }
            }
        }
    }
    out
}

pub fn maxpool(x: &T64) -> T64 {
    let (c, h, w) = x.dims3();
    let mut out = T64::zeros(&[c, h / 2, w / 2]);
    for ch in 0..c {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let m = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| x.at(ch, 2 * y + dy, 2 * xx + dx))
                    .fold(f64::NEG_INFINITY, f64::max);
                out.data[(ch * (h / 2) + y) * (w / 2) + xx] = m;
            }
        }
    }
    out
}

pub fn upsample(x: &T64) -> T64 {
    let (c, h, w) = x.dims3();
    let mut out = T64::zeros(&[c, 2 * h, 2 * w]);
    for ch in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.data[(ch * 2 * h + y) * 2 * w + xx] = x.at(ch, y / 2, xx / 2);
            }
        }
    }
    out
}

/// Sub-pixel `(dy, dx)` of channel `c` lands in channel `c·r² + dy·r + dx`.
pub fn unshuffle(x: &T64, r: usize) -> T64 {
    let (c, h, w) = x.dims3();
    let (oh, ow) = (h / r, w / r);
    let mut out = T64::zeros(&[c * r * r, oh, ow]);
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let oc = ch * r * r + (y % r) * r + xx % r;
                out.data[(oc * oh + y / r) * ow + xx / r] = x.at(ch, y, xx);
            }
        }
    }
    out
}

pub fn shuffle(x: &T64, r: usize) -> T64 {
    let (c, h, w) = x.dims3();
    let co = c / (r * r);
    let mut out = T64::zeros(&[co, h * r, w * r]);
    for ch in 0..co {
        for y in 0..h * r {
            for xx in 0..w * r {
                let ic = ch * r * r + (y % r) * r + xx % r;
                out.data[(ch * h * r + y) * w * r + xx] = x.at(ic, y / r, xx / r);
            }
        }
    }
    out
}

pub fn sum_channels(x: &T64) -> T64 {
    let (c, h, w) = x.dims3();
    let mut out = T64::zeros(&[1, h, w]);
    for ch in 0..c {
        for i in 0..h * w {
            out.data[i] += x.data[ch * h * w + i];
        }
    }
    out
}

/// Parameters by name, copied out of a store so they can be perturbed.
#[derive(Clone)]
pub struct Params(pub Vec<(String, T64)>);

impl Params {
    pub fn from_store(store: &ParamStore) -> Self {
        Self(store.iter().map(|p| (p.name.clone(), T64::from_tensor(&p.value))).collect())
    }

    pub fn get(&self, name: &str) -> &T64 {
        &self.0.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("no parameter {name}")).1
    }
}

pub fn subnet(p: &Params, name: &str, x: &T64) -> T64 {
    let layer = |i: usize, x: &T64| conv(x, p.get(&format!("{name}.{i}.weight")), p.get(&format!("{name}.{i}.bias")));
    let h = layer(0, x).map(|v| leaky(v, 0.2));
    let h = layer(1, &h).map(|v| leaky(v, 0.2));
    layer(2, &h)
}

pub fn log_scale(p: &Params, name: &str, y_l: &T64, clamp: f64) -> T64 {
    subnet(p, &format!("{name}.rho"), y_l).map(|r| clamp * (2.0 * sigmoid(r) - 1.0))
}

pub fn block_forward(p: &Params, name: &str, x_l: &T64, x_h: &T64) -> (T64, T64) {
    let y_l = x_l.zip(&subnet(p, &format!("{name}.phi"), x_h), |a, b| a + b);
    let s = log_scale(p, name, &y_l, 1.0);
    let t = subnet(p, &format!("{name}.eta"), &y_l);
    let y_h = x_h.zip(&s, |x, s| x * s.exp()).zip(&t, |a, b| a + b);
    (y_l, y_h)
}

pub fn block_inverse(p: &Params, name: &str, y_l: &T64, y_h: &T64) -> (T64, T64) {
    let s = log_scale(p, name, y_l, 1.0);
    let t = subnet(p, &format!("{name}.eta"), y_l);
    let x_h = y_h.zip(&t, |a, b| a - b).zip(&s, |d, s| d * (-s).exp());
    let x_l = y_l.zip(&subnet(p, &format!("{name}.phi"), &x_h), |a, b| a - b);
    (x_l, x_h)
}

/// Analytic gradient of `Σ w·op(inputs)` with respect to every input, via the tape.
pub fn tape_grads(inputs: &[Tensor], weights: &Tensor, op: impl Fn(&mut Tape, &[Var]) -> Var) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.variable(t.clone())).collect();
    let y = op(&mut tape, &vars);
    let w = tape.constant(weights.clone());
    let prod = tape.mul(y, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();
    vars.iter().map(|v| grads.get(*v).expect("gradient for every variable").clone()).collect()
}

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL: f64 = 1e-3;
pub const FD_ABS: f64 = 1e-5;

/// Worst mismatch between analytic gradients and central differences of the
/// reference `f(inputs)·w`. Returns `(max relative error, max absolute error,
/// number of entries failing both tolerances)`.
pub fn fd_compare(inputs: &[Tensor], weights: &Tensor, analytic: &[Tensor], f: impl Fn(&[T64]) -> T64) -> (f64, f64, usize) {
    let w = T64::from_tensor(weights);
    let base: Vec<T64> = inputs.iter().map(T64::from_tensor).collect();
    let objective = |xs: &[T64]| -> f64 { f(xs).data.iter().zip(&w.data).map(|(a, b)| a * b).sum() };
    let (mut worst_rel, mut worst_abs, mut failures) = (0.0f64, 0.0f64, 0usize);
    for (k, g) in analytic.iter().enumerate() {
        for i in 0..base[k].data.len() {
            let mut plus = base.clone();
            plus[k].data[i] += FD_STEP;
            let mut minus = base.clone();
            minus[k].data[i] -= FD_STEP;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * FD_STEP);
            let a = f64::from(g.data()[i]);
            let abs = (a - fd).abs();
            let rel = abs / fd.abs().max(a.abs()).max(1e-12);
            if abs > FD_ABS && rel > FD_REL {
                failures += 1;
            }
            if abs > FD_ABS {
                worst_rel = worst_rel.max(rel);
            }
            worst_abs = worst_abs.max(abs);
        }
    }
    (worst_rel, worst_abs, failures)
}

pub struct OpCheck {
    pub name: &'static str,
    /// Entries whose difference interval straddles a kink and is not comparable.
    pub skipped: usize,
    pub worst_rel: f64,
    pub worst_abs: f64,
    pub failures: usize,
}

fn away_from_zero(t: Tensor) -> Tensor {
    t.map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v })
}

/// Values that are pairwise at least `gap` apart, shuffled deterministically.
fn distinct(shape: Vec<usize>, gap: f32, rng: &mut impl rand::Rng) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * gap).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).unwrap()
}

/// Finite-difference checks of every differentiable tape operation.
pub fn op_checks(seed: u64) -> Vec<OpCheck> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut r = |shape: Vec<usize>| Tensor::randn(shape, 1.0, &mut rng);
    let s = vec![2, 4, 4];
    let mut out = Vec::new();
    let mut check = |name: &'static str,
                     inputs: Vec<Tensor>,
                     out_shape: Vec<usize>,
                     wseed: u64,
                     op: &dyn Fn(&mut Tape, &[Var]) -> Var,
                     f: &dyn Fn(&[T64]) -> T64| {
        let mut wr = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(wseed);
        let w = Tensor::randn(out_shape, 1.0, &mut wr);
        let g = tape_grads(&inputs, &w, op);
        let (worst_rel, worst_abs, failures) = fd_compare(&inputs, &w, &g, f);
        out.push(OpCheck { name, skipped: 0, worst_rel, worst_abs, failures });
    };

    let (a, b) = (r(s.clone()), r(s.clone()));
    check("add", vec![a.clone(), b.clone()], s.clone(), 1, &|t, v| t.add(v[0], v[1]).unwrap(), &|x| x[0].zip(&x[1], |p, q| p + q));
    check("sub", vec![a.clone(), b.clone()], s.clone(), 2, &|t, v| t.sub(v[0], v[1]).unwrap(), &|x| x[0].zip(&x[1], |p, q| p - q));
    check("mul", vec![a.clone(), b.clone()], s.clone(), 3, &|t, v| t.mul(v[0], v[1]).unwrap(), &|x| x[0].zip(&x[1], |p, q| p * q));
    check("neg", vec![a.clone()], s.clone(), 4, &|t, v| t.neg(v[0]).unwrap(), &|x| x[0].map(|p| -p));
    check("exp", vec![a.clone()], s.clone(), 5, &|t, v| t.exp(v[0]).unwrap(), &|x| x[0].map(f64::exp));
    check("scale", vec![a.clone()], s.clone(), 6, &|t, v| t.scale(v[0], -1.7).unwrap(), &|x| x[0].map(|p| -1.7 * p));
    check("add_scalar", vec![a.clone()], s.clone(), 7, &|t, v| t.add_scalar(v[0], 0.3).unwrap(), &|x| x[0].map(|p| p + 0.3));
    check("sigmoid", vec![a.clone()], s.clone(), 8, &|t, v| t.sigmoid(v[0]).unwrap(), &|x| x[0].map(sigmoid));
    let k = away_from_zero(a.clone());
    check("leaky_relu", vec![k.clone()], s.clone(), 9, &|t, v| t.leaky_relu(v[0], 0.2).unwrap(), &|x| x[0].map(|p| leaky(p, 0.2)));
    check("abs", vec![k], s.clone(), 10, &|t, v| t.abs(v[0]).unwrap(), &|x| x[0].map(f64::abs));
    check("square", vec![a.clone()], s.clone(), 11, &|t, v| t.square(v[0]).unwrap(), &|x| x[0].map(|p| p * p));
    check("sum", vec![a.clone()], vec![1], 12, &|t, v| t.sum(v[0]).unwrap(), &|x| T64 { shape: vec![1], data: vec![x[0].data.iter().sum()] });
    check("mean", vec![a.clone()], vec![1], 13, &|t, v| t.mean(v[0]).unwrap(), &|x| T64 { shape: vec![1], data: vec![x[0].mean()] });

    let (cx, cw, cb) = (r(vec![2, 5, 4]), r(vec![3, 2, 3, 3]), r(vec![3]));
    check(
        "conv2d",
        vec![cx, cw, cb],
        vec![3, 5, 4],
        14,
        &|t, v| t.conv2d(v[0], v[1], v[2]).unwrap(),
        &|x| conv(&x[0], &x[1], &x[2]),
    );
    let mut prng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0x5eed);
    check("maxpool2", vec![distinct(vec![2, 4, 6], 0.01, &mut prng)], vec![2, 2, 3], 15, &|t, v| t.maxpool2(v[0]).unwrap(), &|x| maxpool(&x[0]));
    check("upsample_nearest2", vec![a.clone()], vec![2, 8, 8], 16, &|t, v| t.upsample_nearest2(v[0]).unwrap(), &|x| upsample(&x[0]));
    check("pixel_unshuffle", vec![a.clone()], vec![8, 2, 2], 17, &|t, v| t.pixel_unshuffle(v[0], 2).unwrap(), &|x| unshuffle(&x[0], 2));
    let p8 = r(vec![8, 2, 3]);
    check("pixel_shuffle", vec![p8], vec![2, 4, 6], 18, &|t, v| t.pixel_shuffle(v[0], 2).unwrap(), &|x| shuffle(&x[0], 2));
    let c1 = r(vec![1, 4, 4]);
    check("concat", vec![a.clone(), c1], vec![3, 4, 4], 19, &|t, v| t.concat(&[v[0], v[1]]).unwrap(), &|x| T64::concat(&[&x[0], &x[1]]));
    let five = r(vec![5, 3, 2]);
    check("slice_channels", vec![five.clone()], vec![2, 3, 2], 20, &|t, v| t.slice_channels(v[0], 1, 2).unwrap(), &|x| x[0].channels(1, 2));
    check("sum_channels", vec![five], vec![1, 3, 2], 21, &|t, v| t.sum_channels(v[0]).unwrap(), &|x| sum_channels(&x[0]));
    check("haar_forward", vec![a.clone()], vec![8, 2, 2], 22, &|t, v| t.haar_forward(v[0]).unwrap(), &|x| haar_fwd(&x[0]));
    let h8 = r(vec![8, 2, 3]);
    check("haar_inverse", vec![h8], vec![2, 4, 6], 23, &|t, v| t.haar_inverse(v[0]).unwrap(), &|x| haar_inv(&x[0]));
    out
}

/// Reference loss of a one-stage, one-block ×2 model with `ẑ = 0`:
/// `λ1·mean|x̂ − x| + λ2·mean(lr − g)² + λ3·mean z²`.
pub fn tiny_model_loss(p: &Params, hr: &T64, guidance: &T64, alpha: bool, lambdas: [f64; 3]) -> f64 {
    let name = "stage0.block0";
    let coeffs = haar_fwd(hr);
    let (low, high) = (coeffs.channels(0, 3), coeffs.channels(3, 9));
    let (x_l, x_h) = if alpha {
        let a = sum_channels(&high).map(|v| v / 9.0);
        (T64::concat(&[&low, &a]), high.channels(1, 8))
    } else {
        (low, high)
    };
    let (y_l, y_h) = block_forward(p, name, &x_l, &x_h);
    let zero = T64::zeros(&y_h.shape);
    let (r_l, r_h) = block_inverse(p, name, &y_l, &zero);
    let recon_coeffs = if alpha {
        let a = r_l.channels(3, 1);
        let removed = a.zip(&sum_channels(&r_h), |a, s| 9.0 * a - s);
        T64::concat(&[&r_l.channels(0, 3), &removed, &r_h])
    } else {
        T64::concat(&[&r_l, &r_h])
    };
    let recon = haar_inv(&recon_coeffs);
    let l_r = recon
        .zip(hr, |a, b| {
            note_side(a - b);
            (a - b).abs()
        })
        .mean();
    let l_g = y_l.channels(0, 3).zip(guidance, |a, b| (a - b).powi(2)).mean();
    let l_d = y_h.map(|v| v * v).mean();
    lambdas[0] * l_r + lambdas[1] * l_g + lambdas[2] * l_d
}

/// Finite-difference check of the library's total loss against
/// [`tiny_model_loss`] for every parameter of a tiny model.
pub fn model_gradcheck(alpha: bool, seed: u64) -> OpCheck {
    use invrescale::metrics::bicubic_downscale;
    use invrescale::model::{ModelConfig, RescaleModel, Variant};
    use invrescale::train::{loss_terms, loss_total, LossWeights};
    use invrescale::PlanarImage;
    use rand::SeedableRng;

    let variant = if alpha { Variant::Alpha } else { Variant::Baseline };
    let mut model = RescaleModel::new(ModelConfig::new(variant, 2).with_blocks(1).with_width(3), seed).unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 1);
    for p in model.store.iter_mut() {
        let noise = Tensor::randn(p.value.shape().to_vec(), 0.3, &mut rng);
        p.value.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v += n);
    }
    let hr = PlanarImage::new(Tensor::uniform(vec![3, 8, 8], 0.0, 1.0, &mut rng)).unwrap();
    let g = bicubic_downscale(&hr, 2).unwrap();
    let w = LossWeights::for_model(2, variant);

    let mut tape = Tape::new();
    let bound = model.store.bind(&mut tape);
    let x = tape.constant(hr.tensor().clone());
    let gv = tape.constant(g.tensor().clone());
    let fv = model.forward_on_tape(&mut tape, &bound, x).unwrap();
    let lr_rgb = tape.slice_channels(fv.lr, 0, 3).unwrap();
    let zero = tape.constant(Tensor::zeros(tape.shape(fv.z).to_vec()));
    let recon = model.inverse_on_tape(&mut tape, &bound, fv.lr, zero).unwrap();
    let terms = loss_terms(&mut tape, x, recon, lr_rgb, gv, fv.z, None).unwrap();
    let total = loss_total(&mut tape, &terms, &w).unwrap();
    let grads = tape.backward(total).unwrap();
    model.store.accumulate(&bound, &grads);

    let base = Params::from_store(&model.store);
    let (hr64, g64) = (T64::from_tensor(hr.tensor()), T64::from_tensor(g.tensor()));
    let lambdas = [f64::from(w.lambda1), f64::from(w.lambda2), f64::from(w.lambda3)];
    let (mut worst_rel, mut worst_abs, mut failures, mut skipped) = (0.0f64, 0.0f64, 0usize, 0usize);
    for (k, param) in model.store.iter().enumerate() {
        for i in 0..param.value.len() {
            let mut plus = base.clone();
            plus.0[k].1.data[i] += FD_STEP;
            let mut minus = base.clone();
            minus.0[k].1.data[i] -= FD_STEP;
            let (lp, sp) = with_kinks(|| tiny_model_loss(&plus, &hr64, &g64, alpha, lambdas));
            let (lm, sm) = with_kinks(|| tiny_model_loss(&minus, &hr64, &g64, alpha, lambdas));
            if sp != sm {
                skipped += 1;
                continue;
            }
            let fd = (lp - lm) / (2.0 * FD_STEP);
            let a = f64::from(param.grad.data()[i]);
            let abs = (a - fd).abs();
            let rel = abs / fd.abs().max(a.abs()).max(1e-12);
            if abs > FD_ABS && rel > FD_REL {
                failures += 1;
            }
            if abs > FD_ABS {
                worst_rel = worst_rel.max(rel);
            }
            worst_abs = worst_abs.max(abs);
        }
    }
    OpCheck {
        name: if alpha { "loss_total (alpha model)" } else { "loss_total (baseline model)" },
        skipped,
        worst_rel,
        worst_abs,
        failures,
    }
}

/// Studio-swing BT.601 luma of an RGB image, per pixel.
pub fn luma(img: &T64) -> T64 {
    let (_, h, w) = img.dims3();
    let mut out = T64::zeros(&[1, h, w]);
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = (img.at(0, y, x), img.at(1, y, x), img.at(2, y, x));
            out.data[y * w + x] = (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
        }
    }
    out
}

pub fn psnr(a: &T64, b: &T64) -> f64 {
    let mse = a.zip(b, |p, q| (p - q) * (p - q)).mean();
    if mse == 0.0 {
        99.0
    } else {
        (-10.0 * mse.log10()).min(99.0)
    }
}

/// Mean SSIM over every fully contained 11×11 window, weighting each window
/// directly with a 2-D Gaussian (σ = 1.5) and centred moments.
pub fn ssim(a: &T64, b: &T64) -> f64 {
    let (_, h, w) = a.dims3();
    let k = 11;
    let mut win = vec![0.0; k * k];
    for dy in 0..k {
        for dx in 0..k {
            let (u, v) = (dy as f64 - 5.0, dx as f64 - 5.0);
            win[dy * k + dx] = (-(u * u + v * v) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let norm: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= norm);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for y in 0..=h - k {
        for x in 0..=w - k {
            let px = |t: &T64, i: usize| t.at(0, y + i / k, x + i % k);
            let ma: f64 = (0..k * k).map(|i| win[i] * px(a, i)).sum();
            let mb: f64 = (0..k * k).map(|i| win[i] * px(b, i)).sum();
            let va: f64 = (0..k * k).map(|i| win[i] * (px(a, i) - ma).powi(2)).sum();
            let vb: f64 = (0..k * k).map(|i| win[i] * (px(b, i) - mb).powi(2)).sum();
            let cov: f64 = (0..k * k).map(|i| win[i] * (px(a, i) - ma) * (px(b, i) - mb)).sum();
            total += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}
