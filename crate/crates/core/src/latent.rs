//! Metadata variant: compress the latent `z` into a 4-channel code and back.
//!
//! The encoder alternates 3×3 convolutions with two 2×2 max-pools, so a
//! `(Z, h, w)` latent becomes a `(4, h/4, w/4)` code. The decoder mirrors it
//! with nearest-neighbour upsampling. Codes are stored as 8-bit levels over
//! the code's own `[min, max]` range; see [`QuantizedCode`] for the byte layout.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::invnet::{Conv, LEAKY_SLOPE};
use crate::tensor::{Adam, AdamConfig, Bound, ParamStore, Tape, Tensor, Var};

pub const CODE_CHANNELS: usize = 4;
pub const CODE_FORMAT_VERSION: u8 = 1;
const HEADER_LEN: usize = 1 + 1 + 4 + 4 + 4 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeConfig {
    /// Convolutions per encoder (and per decoder): 2 or 4.
    pub conv_layers: usize,
    pub pretrained: bool,
    pub frozen_during_joint_training: bool,
    pub hidden_width: usize,
}

impl Default for AeConfig {
    fn default() -> Self {
        Self { conv_layers: 4, pretrained: true, frozen_during_joint_training: false, hidden_width: 64 }
    }
}

impl AeConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.conv_layers, 2 | 4) {
            return Err(Error::Config(format!(
                "autoencoder conv_layers must be 2 or 4, got {}",
                self.conv_layers
            )));
        }
        if self.hidden_width == 0 {
            return Err(Error::Config("autoencoder hidden_width must be positive".into()));
        }
        Ok(())
    }
}

/// Compressed latent: `(4, h, w)` code for an `n`-stage model.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub s: Tensor,
    pub n: u8,
}

/// Stacks per-stage latents at the final resolution.
///
/// Stage `i` of `n` is space-to-depth rearranged by `2^(n-1-i)` so that every
/// latent lines up with the last one; earlier stages come first.
pub fn gather_z(stage_latents: &[Tensor]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = stage_latents.iter().map(|t| tape.constant(t.clone())).collect();
    let z = gather_on_tape(&mut tape, &vars)?;
    Ok(tape.value(z).clone())
}

pub fn gather_on_tape(tape: &mut Tape, stage_latents: &[Var]) -> Result<Var> {
    let n = stage_latents.len();
    match n {
        0 => Err(Error::invalid("gather_z needs at least one stage latent")),
        1 => Ok(stage_latents[0]),
        _ => {
            let mut parts = Vec::with_capacity(n);
            for (i, &z) in stage_latents.iter().enumerate() {
                let r = 1 << (n - 1 - i);
                parts.push(if r == 1 { z } else { tape.pixel_unshuffle(z, r)? });
            }
            tape.concat(&parts)
        }
    }
}

/// Inverse of [`gather_z`] given each stage's channel count.
pub fn scatter_on_tape(tape: &mut Tape, z: Var, stage_channels: &[usize]) -> Result<Vec<Var>> {
    let n = stage_channels.len();
    let expected: usize = stage_channels.iter().enumerate().map(|(i, c)| c << (2 * (n - 1 - i))).sum();
    if tape.shape(z)[0] != expected {
        return Err(Error::invalid(format!(
            "latent has {} channels, stages need {expected}",
            tape.shape(z)[0]
        )));
    }
    let mut out = Vec::with_capacity(n);
    let mut offset = 0;
    for (i, &c) in stage_channels.iter().enumerate() {
        let r = 1usize << (n - 1 - i);
        let part = tape.slice_channels(z, offset, c * r * r)?;
        offset += c * r * r;
        out.push(if r == 1 { part } else { tape.pixel_shuffle(part, r)? });
    }
    Ok(out)
}

/// Convolutional autoencoder over latents with a fixed channel count.
#[derive(Clone, Debug)]
pub struct Autoencoder {
    pub config: AeConfig,
    pub z_channels: usize,
    pub store: ParamStore,
    encoder: Vec<Conv>,
    decoder: Vec<Conv>,
}

impl Autoencoder {
    pub fn new(config: AeConfig, z_channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let h = config.hidden_width;
        let enc_dims: Vec<(usize, usize)> = if config.conv_layers == 2 {
            vec![(z_channels, h), (h, CODE_CHANNELS)]
        } else {
            vec![(z_channels, h), (h, h), (h, h), (h, CODE_CHANNELS)]
        };
        let dec_dims: Vec<(usize, usize)> = if config.conv_layers == 2 {
            vec![(CODE_CHANNELS, h), (h, z_channels)]
        } else {
            vec![(CODE_CHANNELS, h), (h, h), (h, h), (h, z_channels)]
        };
        let encoder = enc_dims
            .iter()
            .enumerate()
            .map(|(i, &(ci, co))| Conv::new(&mut store, &format!("enc.{i}"), ci, co, false, &mut rng))
            .collect();
        let last = dec_dims.len() - 1;
        let decoder = dec_dims
            .iter()
            .enumerate()
            .map(|(i, &(ci, co))| Conv::new(&mut store, &format!("dec.{i}"), ci, co, i == last, &mut rng))
            .collect();
        Ok(Self { config, z_channels, store, encoder, decoder })
    }

    /// Layers between the two pooling (or upsampling) steps.
    fn half(&self) -> usize {
        self.config.conv_layers / 2
    }

    pub fn encode_on_tape(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<Var> {
        let (c, h, w) = tape.value(z).dims3()?;
        if c != self.z_channels {
            return Err(Error::invalid(format!("encoder expects {} channels, got {c}", self.z_channels)));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(format!("latent extents ({h},{w}) must be divisible by 4")));
        }
        let last = self.encoder.len() - 1;
        let mut x = z;
        for (i, conv) in self.encoder.iter().enumerate() {
            x = conv.apply(tape, p, x)?;
            if i != last {
                x = tape.leaky_relu(x, LEAKY_SLOPE)?;
            }
            if (i + 1) % self.half() == 0 {
                x = tape.maxpool2(x)?;
            }
        }
        Ok(x)
    }

    pub fn decode_on_tape(&self, tape: &mut Tape, p: &Bound, s: Var) -> Result<Var> {
        let (c, _, _) = tape.value(s).dims3()?;
        if c != CODE_CHANNELS {
            return Err(Error::invalid(format!("code must have {CODE_CHANNELS} channels, got {c}")));
        }
        let last = self.decoder.len() - 1;
        let mut x = s;
        for (i, conv) in self.decoder.iter().enumerate() {
            if i % self.half() == 0 {
                x = tape.upsample_nearest2(x)?;
            }
            x = conv.apply(tape, p, x)?;
            if i != last {
                x = tape.leaky_relu(x, LEAKY_SLOPE)?;
            }
        }
        Ok(x)
    }

    pub fn encode(&self, z: &Tensor, n: u8) -> Result<LatentCode> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let zv = tape.constant(z.clone());
        let s = self.encode_on_tape(&mut tape, &p, zv)?;
        Ok(LatentCode { s: tape.value(s).clone(), n })
    }

    /// Decodes a code back to a `(target_channels, 4h, 4w)` latent estimate.
    pub fn decode(&self, code: &LatentCode, target_channels: usize) -> Result<Tensor> {
        if target_channels != self.z_channels {
            return Err(Error::invalid(format!(
                "decoder produces {} channels, {target_channels} requested",
                self.z_channels
            )));
        }
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let sv = tape.constant(code.s.clone());
        let z = self.decode_on_tape(&mut tape, &p, sv)?;
        Ok(tape.value(z).clone())
    }

    /// Mean squared reconstruction error of `decode(encode(z))`.
    pub fn reconstruction_mse(&self, z: &Tensor) -> Result<f64> {
        let code = self.encode(z, 1)?;
        let zh = self.decode(&code, self.z_channels)?;
        Ok(z.data().iter().zip(zh.data()).map(|(a, b)| f64::from(a - b).powi(2)).sum::<f64>() / z.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    /// Independent standard-normal latents drawn per step.
    pub samples: usize,
    pub steps: usize,
    /// Spatial extent of the synthetic latents.
    pub size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { samples: 2, steps: 2000, size: 64, lr: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct PretrainReport {
    pub losses: Vec<f32>,
}

impl PretrainReport {
    pub fn final_loss(&self) -> f32 {
        *self.losses.last().expect("at least one step")
    }
}

/// Trains the autoencoder alone to reproduce fresh standard-normal latents.
pub fn pretrain_ae(ae: &mut Autoencoder, cfg: &PretrainConfig) -> Result<PretrainReport> {
    if cfg.steps == 0 || cfg.samples == 0 {
        return Err(Error::Config("pretraining needs at least one step and one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut step_loss = 0.0;
        for _ in 0..cfg.samples {
            let z = Tensor::randn(vec![ae.z_channels, cfg.size, cfg.size], 1.0, &mut rng);
            let mut tape = Tape::new();
            let p = ae.store.bind(&mut tape);
            let zv = tape.constant(z);
            let s = ae.encode_on_tape(&mut tape, &p, zv)?;
            let zh = ae.decode_on_tape(&mut tape, &p, s)?;
            let d = tape.sub(zh, zv)?;
            let sq = tape.square(d)?;
            let loss = tape.mean(sq)?;
            step_loss += tape.value(loss).item();
            let grads = tape.backward(loss)?;
            ae.store.accumulate(&p, &grads);
        }
        ae.store.scale_grad(1.0 / cfg.samples as f32);
        adam.step(&mut ae.store, cfg.lr);
        losses.push(step_loss / cfg.samples as f32);
    }
    Ok(PretrainReport { losses })
}

/// 8-bit uniform quantization of a [`LatentCode`].
///
/// Serialized as: version byte, `n` byte, big-endian `u32` height and width,
/// big-endian IEEE-754 `f32` min and max, then `4·h·w` level bytes in
/// channel-major, row-major order. Level `k` decodes to
/// `min + (k + 0.5)·(max − min)/256`; a constant code has `min == max` and an
/// all-zero payload.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedCode {
    pub n: u8,
    pub height: usize,
    pub width: usize,
    pub min: f32,
    pub max: f32,
    pub bytes: Vec<u8>,
}

impl QuantizedCode {
    pub fn is_degenerate(&self) -> bool {
        self.min == self.max
    }

    pub fn level_value(&self, k: u8) -> f32 {
        if self.is_degenerate() {
            return self.min;
        }
        self.min + (f32::from(k) + 0.5) * (self.max - self.min) / 256.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bytes.len());
        out.push(CODE_FORMAT_VERSION);
        out.push(self.n);
        out.extend_from_slice(&(self.height as u32).to_be_bytes());
        out.extend_from_slice(&(self.width as u32).to_be_bytes());
        out.extend_from_slice(&self.min.to_be_bytes());
        out.extend_from_slice(&self.max.to_be_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN {
            return Err(Error::format("header", format!("{} bytes, need at least {HEADER_LEN}", b.len())));
        }
        if b[0] != CODE_FORMAT_VERSION {
            return Err(Error::format("version", format!("unsupported version {}", b[0])));
        }
        let n = b[1];
        if !matches!(n, 1 | 2) {
            return Err(Error::format("n", format!("stage count {n} not in {{1, 2}}")));
        }
        let be32 = |i: usize| [b[i], b[i + 1], b[i + 2], b[i + 3]];
        let height = u32::from_be_bytes(be32(2)) as usize;
        let width = u32::from_be_bytes(be32(6)) as usize;
        let min = f32::from_be_bytes(be32(10));
        let max = f32::from_be_bytes(be32(14));
        if height == 0 || width == 0 {
            return Err(Error::format("extent", format!("{height}x{width}")));
        }
        if !min.is_finite() || !max.is_finite() || min > max {
            return Err(Error::format("range", format!("min {min}, max {max}")));
        }
        let payload = &b[HEADER_LEN..];
        if payload.len() != CODE_CHANNELS * height * width {
            return Err(Error::format(
                "payload",
                format!("{} bytes, expected {}", payload.len(), CODE_CHANNELS * height * width),
            ));
        }
        Ok(Self { n, height, width, min, max, bytes: payload.to_vec() })
    }
}

pub fn quantize_code(code: &LatentCode) -> Result<QuantizedCode> {
    let (c, h, w) = code.s.dims3()?;
    if c != CODE_CHANNELS {
        return Err(Error::invalid(format!("code must have {CODE_CHANNELS} channels, got {c}")));
    }
    let data = code.s.data();
    let min = data.iter().copied().fold(f32::INFINITY, f32::min);
    let max = data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let bytes = if min == max {
        vec![0; data.len()]
    } else {
        let range = max - min;
        data.iter().map(|&v| (((v - min) / range) * 256.0).floor().clamp(0.0, 255.0) as u8).collect()
    };
    Ok(QuantizedCode { n: code.n, height: h, width: w, min, max, bytes })
}

pub fn dequantize_code(q: &QuantizedCode) -> Result<LatentCode> {
    let s = Tensor::new(
        vec![CODE_CHANNELS, q.height, q.width],
        q.bytes.iter().map(|&k| q.level_value(k)).collect(),
    )?;
    Ok(LatentCode { s, n: q.n })
}

/// Exact inverse of the space-to-depth stacking for a plain tensor.
pub fn scatter_z(z: &Tensor, stage_channels: &[usize]) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let v = tape.constant(z.clone());
    let parts = scatter_on_tape(&mut tape, v, stage_channels)?;
    Ok(parts.into_iter().map(|p| tape.value(p).clone()).collect())
}
