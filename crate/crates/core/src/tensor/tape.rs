//! Define-by-run reverse-mode autodiff.
//!
//! Every op validates its inputs, computes its value eagerly, rejects
//! non-finite results, and records enough state for the backward sweep.

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::wavelet::{haar_forward_raw, haar_inverse_raw};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Neg(Var),
    Exp(Var),
    Scale(Var, f32),
    AddScalar(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f32),
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Conv2d { input: Var, weight: Var, bias: Var, cols: Vec<f32>, k: usize },
    MaxPool2 { input: Var, argmax: Vec<u32> },
    Upsample2(Var),
    PixelUnshuffle(Var, usize),
    PixelShuffle(Var, usize),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    SumChannels(Var),
    HaarForward(Var),
    HaarInverse(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn dims3(&self, v: Var) -> Result<(usize, usize, usize)> {
        self.value(v).dims3()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf that does not take part in differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, name)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let g = self.grad_of(&[a, b]);
        self.push(value, op, g, name)
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f32) -> f32, op: Op) -> Result<Var> {
        let value = self.value(a).map(f);
        let g = self.grad_of(&[a]);
        self.push(value, op, g, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "neg", |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "exp", f32::exp, Op::Exp(a))
    }

    pub fn scale(&mut self, a: Var, s: f32) -> Result<Var> {
        self.unary(a, "scale", |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f32) -> Result<Var> {
        self.unary(a, "add_scalar", |x| x + s, Op::AddScalar(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", sigmoid, Op::Sigmoid(a))
    }

    /// `max(x, slope·x)` for `slope` in `(0, 1)`.
    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Result<Var> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::invalid(format!("leaky_relu slope {slope} outside (0,1)")));
        }
        self.unary(a, "leaky_relu", |x| if x > 0.0 { x } else { slope * x }, Op::LeakyRelu(a, slope))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "abs", f32::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |x| x * x, Op::Square(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: f64 = self.value(a).data().iter().map(|&v| f64::from(v)).sum();
        let g = self.grad_of(&[a]);
        self.push(Tensor::scalar(s as f32), Op::Sum(a), g, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let n = t.len();
        let s: f64 = t.data().iter().map(|&v| f64::from(v)).sum();
        let g = self.grad_of(&[a]);
        self.push(Tensor::scalar((s / n as f64) as f32), Op::Mean(a), g, "mean")
    }

    /// Same-size 2-D cross-correlation. `weight` is `(C_out, C_in, k, k)` with
    /// odd `k`, `bias` is `(C_out)`; padding is `(k-1)/2` zeros.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (c, h, w) = self.dims3(input)?;
        let ws = self.shape(weight).to_vec();
        let [o, wc, kh, kw] = ws[..] else {
            return Err(Error::invalid(format!("conv2d weight must be 4-D, got {ws:?}")));
        };
        if wc != c || kh != kw || kh % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv2d: input has {c} channels, weight shape {ws:?} (need C_in={c}, square odd kernel)"
            )));
        }
        if self.shape(bias) != [o] {
            return Err(Error::invalid(format!(
                "conv2d: bias shape {:?}, expected [{o}]",
                self.shape(bias)
            )));
        }
        let k = kh;
        let kk = c * k * k;
        let hw = h * w;
        let cols = kernels::im2col(self.value(input).data(), c, h, w, k);
        let mut out = Vec::with_capacity(o * hw);
        for &b in self.value(bias).data() {
            out.extend(std::iter::repeat_n(b, hw));
        }
        kernels::gemm(o, kk, hw, self.value(weight).data(), kk, 1, &cols, hw, 1, 1.0, &mut out);
        let value = Tensor::new(vec![o, h, w], out)?;
        let g = self.grad_of(&[input, weight, bias]);
        let cols = if self.grad_of(&[weight]) { cols } else { Vec::new() };
        self.push(value, Op::Conv2d { input, weight, bias, cols, k }, g, "conv2d")
    }

    /// 2×2 non-overlapping max pooling; the gradient routes to the first maximum.
    pub fn maxpool2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.dims3(a)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!("maxpool2 needs even extents, got ({h},{w})")));
        }
        let (out, argmax) = kernels::maxpool2(self.value(a).data(), c, h, w);
        let value = Tensor::new(vec![c, h / 2, w / 2], out)?;
        let g = self.grad_of(&[a]);
        self.push(value, Op::MaxPool2 { input: a, argmax }, g, "maxpool2")
    }

    pub fn upsample_nearest2(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.dims3(a)?;
        let out = kernels::upsample_nearest2(self.value(a).data(), c, h, w);
        let value = Tensor::new(vec![c, 2 * h, 2 * w], out)?;
        let g = self.grad_of(&[a]);
        self.push(value, Op::Upsample2(a), g, "upsample_nearest2")
    }

    pub fn pixel_unshuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let (c, h, w) = self.dims3(a)?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::invalid(format!(
                "pixel_unshuffle: ({h},{w}) not divisible by {r}"
            )));
        }
        let out = kernels::pixel_unshuffle_raw(self.value(a).data(), c, h, w, r);
        let value = Tensor::new(vec![c * r * r, h / r, w / r], out)?;
        let g = self.grad_of(&[a]);
        self.push(value, Op::PixelUnshuffle(a, r), g, "pixel_unshuffle")
    }

    pub fn pixel_shuffle(&mut self, a: Var, r: usize) -> Result<Var> {
        let (c, h, w) = self.dims3(a)?;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::invalid(format!("pixel_shuffle: {c} channels not divisible by {r}²")));
        }
        let oc = c / (r * r);
        let out = kernels::pixel_shuffle_raw(self.value(a).data(), oc, h, w, r);
        let value = Tensor::new(vec![oc, h * r, w * r], out)?;
        let g = self.grad_of(&[a]);
        self.push(value, Op::PixelShuffle(a, r), g, "pixel_shuffle")
    }

    /// Concatenates `(C_i, H, W)` values along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_channels(&tensors)?;
        let g = self.grad_of(parts);
        self.push(value, Op::Concat(parts.to_vec()), g, "concat")
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).channels(start, len)?;
        let g = self.grad_of(&[a]);
        self.push(value, Op::Slice { input: a, start }, g, "slice_channels")
    }

    /// Per-pixel sum over channels: `(C, H, W)` to `(1, H, W)`.
    pub fn sum_channels(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.dims3(a)?;
        let src = self.value(a).data();
        let mut out = vec![0.0f32; h * w];
        for ci in 0..c {
            for (o, s) in out.iter_mut().zip(&src[ci * h * w..(ci + 1) * h * w]) {
                *o += s;
            }
        }
        let value = Tensor::new(vec![1, h, w], out)?;
        let g = self.grad_of(&[a]);
        self.push(value, Op::SumChannels(a), g, "sum_channels")
    }

    /// Orthonormal Haar analysis; see [`crate::wavelet`].
    pub fn haar_forward(&mut self, a: Var) -> Result<Var> {
        let (c, h, w) = self.dims3(a)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::invalid(format!("haar_forward needs even extents, got ({h},{w})")));
        }
        let out = haar_forward_raw(self.value(a).data(), c, h, w);
        let value = Tensor::new(vec![4 * c, h / 2, w / 2], out)?;
        let g = self.grad_of(&[a]);
        self.push(value, Op::HaarForward(a), g, "haar_forward")
    }

    /// Orthonormal Haar synthesis; see [`crate::wavelet`].
    pub fn haar_inverse(&mut self, a: Var) -> Result<Var> {
        let (c4, h, w) = self.dims3(a)?;
        if c4 % 4 != 0 {
            return Err(Error::invalid(format!("haar_inverse needs 4C channels, got {c4}")));
        }
        let out = haar_inverse_raw(self.value(a).data(), c4 / 4, h, w);
        let value = Tensor::new(vec![c4 / 4, 2 * h, 2 * w], out)?;
        let g = self.grad_of(&[a]);
        self.push(value, Op::HaarInverse(a), g, "haar_inverse")
    }

    /// Runs the reverse sweep from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (g, &n.op) {
                (Some(g), Op::Leaf) if n.needs_grad => Tensor::new(n.value.shape().to_vec(), g).ok(),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f32])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, &mut |s| {
                    s.iter_mut().zip(g).zip(vb).for_each(|((d, gi), y)| *d += gi * y)
                });
                acc(*b, &mut |s| {
                    s.iter_mut().zip(g).zip(va).for_each(|((d, gi), x)| *d += gi * x)
                });
            }
            Op::Neg(a) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(d, gi)| *d -= gi)),
            Op::Exp(a) => {
                let out = node.value.data();
                acc(*a, &mut |s| s.iter_mut().zip(g).zip(out).for_each(|((d, gi), e)| *d += gi * e));
            }
            Op::Scale(a, k) => acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * k)),
            Op::AddScalar(a) => acc(*a, &mut |s| add_into(s, g)),
            Op::Sigmoid(a) => {
                let out = node.value.data();
                acc(*a, &mut |s| {
                    s.iter_mut().zip(g).zip(out).for_each(|((d, gi), y)| *d += gi * y * (1.0 - y))
                });
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(*a);
                acc(*a, &mut |s| {
                    s.iter_mut()
                        .zip(g)
                        .zip(x)
                        .for_each(|((d, gi), xi)| *d += if *xi > 0.0 { *gi } else { gi * slope })
                });
            }
            Op::Abs(a) => {
                let x = val(*a);
                acc(*a, &mut |s| {
                    s.iter_mut().zip(g).zip(x).for_each(|((d, gi), xi)| {
                        if *xi > 0.0 {
                            *d += gi;
                        } else if *xi < 0.0 {
                            *d -= gi;
                        }
                    })
                });
            }
            Op::Square(a) => {
                let x = val(*a);
                acc(*a, &mut |s| {
                    s.iter_mut().zip(g).zip(x).for_each(|((d, gi), xi)| *d += 2.0 * gi * xi)
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f32;
                acc(*a, &mut |s| s.iter_mut().for_each(|d| *d += g[0] / n));
            }
            Op::Conv2d { input, weight, bias, cols, k } => {
                let (c, h, w) = self.nodes[input.0].value.dims3().expect("conv input is 3-D");
                let o = node.value.shape()[0];
                let hw = h * w;
                let kk = c * k * k;
                acc(*bias, &mut |s| {
                    for (oc, d) in s.iter_mut().enumerate() {
                        *d += g[oc * hw..(oc + 1) * hw].iter().sum::<f32>();
                    }
                });
                if wants(*weight) {
                    acc(*weight, &mut |s| kernels::gemm(o, hw, kk, g, hw, 1, cols, 1, hw, 1.0, s));
                }
                if wants(*input) {
                    let wt = val(*weight);
                    let mut gcols = vec![0.0; kk * hw];
                    kernels::gemm(kk, o, hw, wt, 1, kk, g, hw, 1, 0.0, &mut gcols);
                    acc(*input, &mut |s| kernels::col2im(&gcols, c, h, w, *k, s));
                }
            }
            Op::MaxPool2 { input, argmax } => acc(*input, &mut |s| {
                for (gi, &i) in g.iter().zip(argmax) {
                    s[i as usize] += gi;
                }
            }),
            Op::Upsample2(a) => {
                let (c, h, w) = self.nodes[a.0].value.dims3().expect("3-D");
                let back = kernels::upsample_nearest2_backward(g, c, h, w);
                acc(*a, &mut |s| add_into(s, &back));
            }
            Op::PixelUnshuffle(a, r) => {
                let (c, h, w) = self.nodes[a.0].value.dims3().expect("3-D");
                let back = kernels::pixel_shuffle_raw(g, c, h / r, w / r, *r);
                acc(*a, &mut |s| add_into(s, &back));
            }
            Op::PixelShuffle(a, r) => {
                let (c, h, w) = node.value.dims3().expect("3-D");
                let back = kernels::pixel_unshuffle_raw(g, c, h, w, *r);
                acc(*a, &mut |s| add_into(s, &back));
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    acc(*p, &mut |s| add_into(s, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::Slice { input, start } => {
                let (_, h, w) = node.value.dims3().expect("3-D");
                let off = start * h * w;
                acc(*input, &mut |s| add_into(&mut s[off..off + g.len()], g));
            }
            Op::SumChannels(a) => {
                let plane = g.len();
                acc(*a, &mut |s| {
                    for chunk in s.chunks_mut(plane) {
                        add_into(chunk, g);
                    }
                });
            }
            // orthonormal: the adjoint of analysis is synthesis and vice versa
            Op::HaarForward(a) => {
                let (c4, h, w) = node.value.dims3().expect("3-D");
                let back = haar_inverse_raw(g, c4 / 4, h, w);
                acc(*a, &mut |s| add_into(s, &back));
            }
            Op::HaarInverse(a) => {
                let (c, h, w) = node.value.dims3().expect("3-D");
                let back = haar_forward_raw(g, c, h, w);
                acc(*a, &mut |s| add_into(s, &back));
            }
        }
    }
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
