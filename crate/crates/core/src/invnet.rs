//! Invertible coupling blocks and the channel-splitting policies that feed them.
//!
//! A block maps `(x_l, x_h)` to `(y_l, y_h)` with
//!
//! ```text
//! y_l = x_l + φ(x_h)
//! y_h = x_h ⊙ exp(s(ρ(y_l))) + η(y_l),     s(t) = clamp · (2·sigmoid(t) − 1)
//! ```
//!
//! and is inverted exactly from the same parameters. `φ`, `η`, `ρ` are small
//! same-padding conv nets whose last layer starts at zero, so a fresh block is
//! the identity.
//!
//! The alpha split adds one plane to the low branch and drops the first detail
//! channel from the high branch; [`recover_removed_channel`] reconstructs it at
//! the end of the inverse pass from the alpha plane and the surviving detail
//! channels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use crate::wavelet::HaarStack;

pub const LEAKY_SLOPE: f32 = 0.2;
pub const DEFAULT_CLAMP: f32 = 1.0;
pub const DEFAULT_SUBNET_WIDTH: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Baseline,
    PreSplitAlpha,
    PostSplitAlpha,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    pub alpha_avg_init: bool,
    pub low_channels: usize,
    pub high_channels: usize,
}

impl SplitSpec {
    /// Channel partition for a `4C`-channel Haar stack of a `C`-channel input.
    pub fn new(mode: SplitMode, alpha_avg_init: bool, image_channels: usize) -> Self {
        let c = image_channels;
        let (low, high) = match mode {
            SplitMode::Baseline | SplitMode::PostSplitAlpha => (c, 3 * c),
            SplitMode::PreSplitAlpha => (c + 1, 3 * c - 1),
        };
        Self { mode, alpha_avg_init, low_channels: low, high_channels: high }
    }

    pub fn image_channels(&self) -> usize {
        (self.low_channels + self.high_channels) / 4
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutput {
    pub x_l: Tensor,
    pub x_h: Tensor,
    /// Index within the detail group of the dropped channel (pre-split alpha only).
    pub removed_channel_index: Option<usize>,
}

/// Partitions a Haar stack into coupling inputs.
///
/// Pre-split alpha appends an alpha plane to the low branch (the per-pixel
/// mean of all `3C` detail channels when `alpha_avg_init`, else zero) and
/// removes detail channel 0 from the high branch.
pub fn split_channels(stack: &HaarStack, spec: &SplitSpec) -> Result<SplitOutput> {
    let c = stack.image_channels();
    check_stack(stack, spec, c)?;
    let mut tape = Tape::new();
    let low = tape.constant(stack.low.clone());
    let high = tape.constant(stack.high.clone());
    let (x_l, x_h) = split_on_tape(&mut tape, low, high, spec)?;
    Ok(SplitOutput {
        x_l: tape.value(x_l).clone(),
        x_h: tape.value(x_h).clone(),
        removed_channel_index: (spec.mode == SplitMode::PreSplitAlpha).then_some(0),
    })
}

fn check_stack(stack: &HaarStack, spec: &SplitSpec, c: usize) -> Result<()> {
    if stack.high.shape()[0] != 3 * c {
        return Err(Error::invalid(format!(
            "stack has {} low and {} high channels; need C and 3C",
            c,
            stack.high.shape()[0]
        )));
    }
    if spec.low_channels + spec.high_channels != 4 * c {
        return Err(Error::invalid(format!(
            "split spec partitions {} channels, stack has {}",
            spec.low_channels + spec.high_channels,
            4 * c
        )));
    }
    Ok(())
}

/// Tape version of [`split_channels`] on separate low `(C,·,·)` and high `(3C,·,·)` inputs.
pub fn split_on_tape(tape: &mut Tape, low: Var, high: Var, spec: &SplitSpec) -> Result<(Var, Var)> {
    let c = tape.shape(low)[0];
    let hc = tape.shape(high)[0];
    if hc != 3 * c || spec.low_channels + spec.high_channels != 4 * c {
        return Err(Error::invalid(format!(
            "split of {c}+{hc} channels with spec {}+{}",
            spec.low_channels, spec.high_channels
        )));
    }
    match spec.mode {
        SplitMode::Baseline => Ok((low, high)),
        SplitMode::PostSplitAlpha => Err(Error::invalid(
            "post-split alpha is taken from the latent after the blocks, not at the split",
        )),
        SplitMode::PreSplitAlpha => {
            let alpha = if spec.alpha_avg_init {
                let s = tape.sum_channels(high)?;
                tape.scale(s, 1.0 / (3 * c) as f32)?
            } else {
                let (_, h, w) = tape.value(low).dims3()?;
                tape.constant(Tensor::zeros(vec![1, h, w]))
            };
            let x_l = tape.concat(&[low, alpha])?;
            let x_h = tape.slice_channels(high, 1, 3 * c - 1)?;
            Ok((x_l, x_h))
        }
    }
}

/// Rebuilds the dropped detail channel: `x_m = 3C·x_α − Σ x_h^i`.
pub fn recover_removed_channel(x_alpha: &Tensor, x_h_partial: &Tensor, c: usize) -> Result<Tensor> {
    let mut tape = Tape::new();
    let a = tape.constant(x_alpha.clone());
    let h = tape.constant(x_h_partial.clone());
    let m = recover_on_tape(&mut tape, a, h, c)?;
    Ok(tape.value(m).clone())
}

pub fn recover_on_tape(tape: &mut Tape, x_alpha: Var, x_h_partial: Var, c: usize) -> Result<Var> {
    let (ac, ah, aw) = tape.value(x_alpha).dims3()?;
    let (hc, hh, hw) = tape.value(x_h_partial).dims3()?;
    if ac != 1 || hc + 1 != 3 * c || (ah, aw) != (hh, hw) {
        return Err(Error::invalid(format!(
            "recovery needs a 1-channel alpha and {} detail channels, got {ac} and {hc}",
            3 * c - 1
        )));
    }
    let total = tape.scale(x_alpha, (3 * c) as f32)?;
    let partial = tape.sum_channels(x_h_partial)?;
    tape.sub(total, partial)
}

/// 3×3 same-padding convolution parameters registered in a [`ParamStore`].
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    weight: ParamId,
    bias: ParamId,
}

impl Conv {
    pub(crate) fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, zero: bool, rng: &mut impl Rng) -> Self {
        let shape = vec![cout, cin, 3, 3];
        let weight = if zero {
            Tensor::zeros(shape)
        } else {
            he_normal(shape, cin * 9, rng)
        };
        Self {
            weight: store.add(format!("{name}.weight"), weight),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![cout])),
        }
    }

    pub(crate) fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        tape.conv2d(x, p[self.weight], p[self.bias])
    }
}

pub(crate) fn he_normal(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / ((1.0 + LEAKY_SLOPE * LEAKY_SLOPE) * fan_in as f32)).sqrt();
    let normal = Normal::new(0.0f32, std).expect("finite std");
    Tensor::from_fn(shape, |_| normal.sample(rng))
}

/// conv3×3 → leaky → conv3×3 → leaky → conv3×3 (zero-initialized).
#[derive(Clone, Debug)]
pub struct Subnet {
    layers: [Conv; 3],
}

impl Subnet {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            layers: [
                Conv::new(store, &format!("{name}.0"), cin, width, false, rng),
                Conv::new(store, &format!("{name}.1"), width, width, false, rng),
                Conv::new(store, &format!("{name}.2"), width, cout, true, rng),
            ],
        }
    }

    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let h = self.layers[0].apply(tape, p, x)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        let h = self.layers[1].apply(tape, p, h)?;
        let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
        self.layers[2].apply(tape, p, h)
    }
}

/// One affine coupling block over a `low`/`high` channel partition.
#[derive(Clone, Debug)]
pub struct InvBlock {
    pub low: usize,
    pub high: usize,
    pub clamp: f32,
    phi: Subnet,
    eta: Subnet,
    rho: Subnet,
}

impl InvBlock {
    pub fn new(store: &mut ParamStore, name: &str, low: usize, high: usize, width: usize, rng: &mut impl Rng) -> Self {
        Self {
            low,
            high,
            clamp: DEFAULT_CLAMP,
            phi: Subnet::new(store, &format!("{name}.phi"), high, low, width, rng),
            eta: Subnet::new(store, &format!("{name}.eta"), low, high, width, rng),
            rho: Subnet::new(store, &format!("{name}.rho"), low, high, width, rng),
        }
    }

    fn check(&self, tape: &Tape, a: Var, b: Var) -> Result<()> {
        let (la, lh, lw) = tape.value(a).dims3()?;
        let (ha, hh, hw) = tape.value(b).dims3()?;
        if la != self.low || ha != self.high || (lh, lw) != (hh, hw) {
            return Err(Error::invalid(format!(
                "block expects ({}, {}) channels, got ({la}, {ha}) at ({lh},{lw})/({hh},{hw})",
                self.low, self.high
            )));
        }
        Ok(())
    }

    /// `clamp · (2·sigmoid(ρ(y_l)) − 1)`, always within `[−clamp, clamp]`.
    fn log_scale(&self, tape: &mut Tape, p: &Bound, y_l: Var) -> Result<Var> {
        let r = self.rho.apply(tape, p, y_l)?;
        let s = tape.sigmoid(r)?;
        let s = tape.scale(s, 2.0 * self.clamp)?;
        tape.add_scalar(s, -self.clamp)
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, x_l: Var, x_h: Var) -> Result<(Var, Var)> {
        self.check(tape, x_l, x_h)?;
        let shift = self.phi.apply(tape, p, x_h)?;
        let y_l = tape.add(x_l, shift)?;
        let s = self.log_scale(tape, p, y_l)?;
        let e = tape.exp(s)?;
        let scaled = tape.mul(x_h, e)?;
        let t = self.eta.apply(tape, p, y_l)?;
        let y_h = tape.add(scaled, t)?;
        Ok((y_l, y_h))
    }

    pub fn inverse(&self, tape: &mut Tape, p: &Bound, y_l: Var, y_h: Var) -> Result<(Var, Var)> {
        self.check(tape, y_l, y_h)?;
        let s = self.log_scale(tape, p, y_l)?;
        let ns = tape.neg(s)?;
        let e = tape.exp(ns)?;
        let t = self.eta.apply(tape, p, y_l)?;
        let d = tape.sub(y_h, t)?;
        let x_h = tape.mul(d, e)?;
        let shift = self.phi.apply(tape, p, x_h)?;
        let x_l = tape.sub(y_l, shift)?;
        Ok((x_l, x_h))
    }
}

/// A cascade of [`InvBlock`]s owning its parameters.
#[derive(Clone, Debug)]
pub struct BlockStack {
    pub store: ParamStore,
    pub blocks: Vec<InvBlock>,
}

impl BlockStack {
    pub fn new(low: usize, high: usize, depth: usize, width: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let blocks = (0..depth)
            .map(|i| InvBlock::new(&mut store, &format!("block{i}"), low, high, width, rng))
            .collect();
        Self { store, blocks }
    }

    /// Adds `N(0, std²)` noise to every parameter.
    pub fn perturb(&mut self, std: f32, rng: &mut impl Rng) {
        let normal = Normal::new(0.0f32, std).expect("finite std");
        for p in self.store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|v| *v += normal.sample(rng));
        }
    }

    pub fn forward(&self, x_l: &Tensor, x_h: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let (mut a, mut b) = (tape.constant(x_l.clone()), tape.constant(x_h.clone()));
        for blk in &self.blocks {
            (a, b) = blk.forward(&mut tape, &p, a, b)?;
        }
        Ok((tape.value(a).clone(), tape.value(b).clone()))
    }

    pub fn inverse(&self, y_l: &Tensor, y_h: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let (mut a, mut b) = (tape.constant(y_l.clone()), tape.constant(y_h.clone()));
        for blk in self.blocks.iter().rev() {
            (a, b) = blk.inverse(&mut tape, &p, a, b)?;
        }
        Ok((tape.value(a).clone(), tape.value(b).clone()))
    }
}

/// Forward pass of a single block outside of any training tape.
pub fn invblock_forward(x_l: &Tensor, x_h: &Tensor, block: &InvBlock, params: &ParamStore) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let (a, b) = (tape.constant(x_l.clone()), tape.constant(x_h.clone()));
    let (y_l, y_h) = block.forward(&mut tape, &p, a, b)?;
    Ok((tape.value(y_l).clone(), tape.value(y_h).clone()))
}

/// Inverse pass of a single block outside of any training tape.
pub fn invblock_inverse(y_l: &Tensor, y_h: &Tensor, block: &InvBlock, params: &ParamStore) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let p = params.bind_frozen(&mut tape);
    let (a, b) = (tape.constant(y_l.clone()), tape.constant(y_h.clone()));
    let (x_l, x_h) = block.inverse(&mut tape, &p, a, b)?;
    Ok((tape.value(x_l).clone(), tape.value(x_h).clone()))
}
