//! Rescaling models: Haar + coupling stages, with the baseline, alpha and
//! metadata variants.
//!
//! A model has one stage per factor of two. Each stage Haar-transforms its
//! input, splits the coefficients into a low and a high branch, and runs its
//! coupling blocks. The low branch of the last stage is the LR image; the high
//! branches are the latent `z`.
//!
//! At 4× with the alpha variant the first stage pre-splits the alpha plane
//! (low branch RGB+α, one detail channel dropped) and the second stage
//! transforms that 4-channel low branch as an ordinary 4-channel image, so the
//! LR output is RGBA at every scale. The dropped channel is only rebuilt at the
//! end of the first stage's inverse.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::invnet::{recover_on_tape, split_on_tape, InvBlock, SplitMode, SplitSpec, DEFAULT_SUBNET_WIDTH};
use crate::latent::{
    dequantize_code, gather_on_tape, quantize_code, scatter_on_tape, AeConfig, Autoencoder, LatentCode,
    QuantizedCode,
};
use crate::tensor::{Bound, ParamStore, Tape, Tensor, Var};

pub const RGB: usize = 3;
/// Logit input clamp.
pub const LOGIT_EPS: f32 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    Alpha,
    Meta,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::Alpha => "alpha",
            Variant::Meta => "meta",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "alpha" => Ok(Variant::Alpha),
            "meta" => Ok(Variant::Meta),
            other => Err(Error::Config(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub scale: usize,
    pub variant: Variant,
    pub blocks_per_stage: usize,
    pub subnet_width: usize,
    /// Split policy of the first stage.
    pub split: SplitSpec,
    pub ae: Option<AeConfig>,
}

impl ModelConfig {
    /// Defaults for a variant: 8 blocks per stage, pre-split alpha with mean
    /// initialization, 4-layer autoencoder.
    pub fn new(variant: Variant, scale: usize) -> Self {
        let split = match variant {
            Variant::Alpha => SplitSpec::new(SplitMode::PreSplitAlpha, true, RGB),
            _ => SplitSpec::new(SplitMode::Baseline, false, RGB),
        };
        Self {
            scale,
            variant,
            blocks_per_stage: 8,
            subnet_width: DEFAULT_SUBNET_WIDTH,
            split,
            ae: (variant == Variant::Meta).then(AeConfig::default),
        }
    }

    pub fn with_blocks(mut self, blocks: usize) -> Self {
        self.blocks_per_stage = blocks;
        self
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.subnet_width = width;
        self
    }

    pub fn with_split(mut self, mode: SplitMode, alpha_avg_init: bool) -> Self {
        self.split = SplitSpec::new(mode, alpha_avg_init, RGB);
        self
    }

    pub fn with_ae(mut self, ae: AeConfig) -> Self {
        self.ae = Some(ae);
        self
    }

    pub fn stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }

    /// Required divisor of HR extents.
    pub fn required_multiple(&self) -> usize {
        match self.variant {
            Variant::Meta => 4 * self.scale,
            _ => 2 * self.scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.scale, 2 | 4) {
            return Err(Error::Config(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if self.blocks_per_stage == 0 || self.subnet_width == 0 {
            return Err(Error::Config("blocks_per_stage and subnet_width must be positive".into()));
        }
        if self.split != SplitSpec::new(self.split.mode, self.split.alpha_avg_init, RGB) {
            return Err(Error::Config(format!("inconsistent split channel counts {:?}", self.split)));
        }
        let alpha_split = matches!(self.split.mode, SplitMode::PreSplitAlpha | SplitMode::PostSplitAlpha);
        if (self.variant == Variant::Alpha) != alpha_split {
            return Err(Error::Config(format!(
                "variant {} cannot use split mode {:?}",
                self.variant, self.split.mode
            )));
        }
        if self.ae.is_some() != (self.variant == Variant::Meta) {
            return Err(Error::Config("an autoencoder config is required for, and only for, the meta variant".into()));
        }
        if let Some(ae) = &self.ae {
            ae.validate()?;
        }
        Ok(())
    }

    /// Channels of the network's LR output (RGB, plus α for the alpha variant).
    pub fn lr_channels(&self) -> usize {
        if self.variant == Variant::Alpha {
            RGB + 1
        } else {
            RGB
        }
    }
}

#[derive(Clone, Debug)]
struct Stage {
    split: SplitSpec,
    blocks: Vec<InvBlock>,
}

/// What gets written to disk: the LR image plus whichever latent carrier the
/// variant uses.
#[derive(Clone, Debug, PartialEq)]
pub struct RescaleArtifact {
    pub lr_rgb: PlanarImage,
    /// `(1, h, w)` plane in `(0, 1)`.
    pub alpha: Option<Tensor>,
    pub meta: Option<QuantizedCode>,
}

impl RescaleArtifact {
    pub fn variant(&self) -> Variant {
        match (&self.alpha, &self.meta) {
            (Some(_), _) => Variant::Alpha,
            (None, Some(_)) => Variant::Meta,
            (None, None) => Variant::Baseline,
        }
    }

    /// The artifact as it reads back from an 8-bit file.
    pub fn quantized(&self) -> Self {
        Self {
            lr_rgb: self.lr_rgb.quantize_8bit(),
            alpha: self.alpha.as_ref().map(|a| a.map(|v| f32::from(crate::image::to_u8(v)) / 255.0)),
            meta: self.meta.clone(),
        }
    }
}

/// Tape handles produced by a forward (downscaling) pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// LR output; the alpha channel, when present, is still unbounded.
    pub lr: Var,
    /// Per-stage latents that are not stored.
    pub stage_z: Vec<Var>,
    /// `stage_z` gathered at LR resolution.
    pub z: Var,
}

#[derive(Clone, Debug)]
pub struct RescaleModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    stages: Vec<Stage>,
    pub ae: Option<Autoencoder>,
}

pub fn logit_clamped(a: f32, eps: f32) -> f32 {
    let a = a.clamp(eps, 1.0 - eps);
    (a / (1.0 - a)).ln()
}

/// Maps a stored alpha sample to the unbounded domain; exact 0 and 1 (which
/// 8-bit quantization can produce) are pulled to the centres of the end bins.
pub fn alpha_to_logit(a: f32) -> f32 {
    let a = if a <= 0.0 {
        0.5 / 256.0
    } else if a >= 1.0 {
        255.5 / 256.0
    } else {
        a
    };
    logit_clamped(a, LOGIT_EPS)
}

impl RescaleModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut stages = Vec::with_capacity(config.stages());
        let mut channels = RGB;
        for s in 0..config.stages() {
            let split = if s == 0 {
                config.split
            } else {
                SplitSpec::new(SplitMode::Baseline, false, channels)
            };
            let blocks = (0..config.blocks_per_stage)
                .map(|b| {
                    InvBlock::new(
                        &mut store,
                        &format!("stage{s}.block{b}"),
                        split.low_channels,
                        split.high_channels,
                        config.subnet_width,
                        &mut rng,
                    )
                })
                .collect();
            channels = split.low_channels;
            stages.push(Stage { split, blocks });
        }
        let mut model = Self { config, store, stages, ae: None };
        if let Some(ae_cfg) = config.ae {
            model.ae = Some(Autoencoder::new(ae_cfg, model.z_channels(), seed.wrapping_add(1))?);
        }
        Ok(model)
    }

    fn post_split(&self) -> bool {
        self.config.split.mode == SplitMode::PostSplitAlpha
    }

    /// Channels of each stage's unstored latent.
    pub fn stage_z_channels(&self) -> Vec<usize> {
        let last = self.stages.len() - 1;
        self.stages
            .iter()
            .enumerate()
            .map(|(i, s)| s.split.high_channels - usize::from(i == last && self.post_split()))
            .collect()
    }

    /// Channels of the gathered latent.
    pub fn z_channels(&self) -> usize {
        let n = self.stages.len();
        self.stage_z_channels().iter().enumerate().map(|(i, c)| c << (2 * (n - 1 - i))).sum()
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.config.required_multiple();
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) {
            return Err(Error::invalid(format!(
                "input {h}x{w} must be divisible by {m} for a {}x {} model",
                self.config.scale, self.config.variant
            )));
        }
        Ok(())
    }

    pub fn forward_on_tape(&self, tape: &mut Tape, p: &Bound, hr: Var) -> Result<ForwardVars> {
        let (c, h, w) = tape.value(hr).dims3()?;
        if c != RGB {
            return Err(Error::invalid(format!("HR input must be RGB, got {c} channels")));
        }
        self.check_input(h, w)?;
        let mut x = hr;
        let mut stage_z = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let ci = tape.shape(x)[0];
            let coeffs = tape.haar_forward(x)?;
            let low = tape.slice_channels(coeffs, 0, ci)?;
            let high = tape.slice_channels(coeffs, ci, 3 * ci)?;
            let split = match stage.split.mode {
                SplitMode::PostSplitAlpha => SplitSpec::new(SplitMode::Baseline, false, ci),
                _ => stage.split,
            };
            let (mut a, mut b) = split_on_tape(tape, low, high, &split)?;
            for blk in &stage.blocks {
                (a, b) = blk.forward(tape, p, a, b)?;
            }
            x = a;
            stage_z.push(b);
        }
        let mut lr = x;
        if self.post_split() {
            let last = stage_z.pop().expect("at least one stage");
            let hc = tape.shape(last)[0];
            let alpha = tape.slice_channels(last, 0, 1)?;
            stage_z.push(tape.slice_channels(last, 1, hc - 1)?);
            lr = tape.concat(&[lr, alpha])?;
        }
        let z = gather_on_tape(tape, &stage_z)?;
        Ok(ForwardVars { lr, stage_z, z })
    }

    /// Inverse pass from an LR tensor (unbounded alpha) and a gathered latent estimate.
    pub fn inverse_on_tape(&self, tape: &mut Tape, p: &Bound, lr: Var, z_hat: Var) -> Result<Var> {
        let (lc, h, w) = tape.value(lr).dims3()?;
        if lc != self.config.lr_channels() {
            return Err(Error::invalid(format!(
                "LR tensor has {lc} channels, model expects {}",
                self.config.lr_channels()
            )));
        }
        let (zc, zh, zw) = tape.value(z_hat).dims3()?;
        if zc != self.z_channels() || (zh, zw) != (h, w) {
            return Err(Error::invalid(format!(
                "latent estimate is ({zc},{zh},{zw}), expected ({},{h},{w})",
                self.z_channels()
            )));
        }
        let mut parts = scatter_on_tape(tape, z_hat, &self.stage_z_channels())?;
        let mut x = lr;
        if self.post_split() {
            let alpha = tape.slice_channels(lr, RGB, 1)?;
            x = tape.slice_channels(lr, 0, RGB)?;
            let last = parts.pop().expect("at least one stage");
            parts.push(tape.concat(&[alpha, last])?);
        }
        for (stage, y_h) in self.stages.iter().zip(parts).rev() {
            let (mut a, mut b) = (x, y_h);
            for blk in stage.blocks.iter().rev() {
                (a, b) = blk.inverse(tape, p, a, b)?;
            }
            let coeffs = if stage.split.mode == SplitMode::PreSplitAlpha {
                let c = stage.split.image_channels();
                let low = tape.slice_channels(a, 0, c)?;
                let alpha = tape.slice_channels(a, c, 1)?;
                let removed = recover_on_tape(tape, alpha, b, c)?;
                tape.concat(&[low, removed, b])?
            } else {
                tape.concat(&[a, b])?
            };
            x = tape.haar_inverse(coeffs)?;
        }
        Ok(x)
    }

    /// Runs the forward pass and packages the LR artifact. Returns the
    /// gathered latent alongside it.
    pub fn downscale(&self, hr: &PlanarImage) -> Result<(RescaleArtifact, Tensor)> {
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let x = tape.constant(hr.tensor().clone());
        let fv = self.forward_on_tape(&mut tape, &p, x)?;
        let lr = tape.value(fv.lr).clone();
        let z = tape.value(fv.z).clone();
        let lr_rgb = PlanarImage::new(lr.channels(0, RGB)?)?;
        let alpha = match self.config.variant {
            Variant::Alpha => Some(lr.channels(RGB, 1)?.map(crate::tensor::sigmoid)),
            _ => None,
        };
        let meta = match &self.ae {
            Some(ae) => Some(quantize_code(&ae.encode(&z, self.stages.len() as u8)?)?),
            None => None,
        };
        Ok((RescaleArtifact { lr_rgb, alpha, meta }, z))
    }

    /// Reconstructs the HR image. `z_override` replaces the latent estimate
    /// (zeros for baseline/alpha, the decoded code for meta).
    pub fn upscale(&self, artifact: &RescaleArtifact, z_override: Option<&Tensor>) -> Result<PlanarImage> {
        let found = artifact.variant();
        if found != self.config.variant {
            return Err(Error::VariantMismatch(format!(
                "artifact carries a {found} latent but the model is {}",
                self.config.variant
            )));
        }
        let (h, w) = (artifact.lr_rgb.height(), artifact.lr_rgb.width());
        let mut tape = Tape::new();
        let p = self.store.bind_frozen(&mut tape);
        let rgb = tape.constant(artifact.lr_rgb.tensor().clone());
        let lr = match &artifact.alpha {
            Some(a) => {
                if a.shape() != [1, h, w] {
                    return Err(Error::invalid(format!("alpha plane {:?} does not match LR {h}x{w}", a.shape())));
                }
                let logits = tape.constant(a.map(alpha_to_logit));
                tape.concat(&[rgb, logits])?
            }
            None => rgb,
        };
        let z_hat = match (z_override, &artifact.meta, &self.ae) {
            (Some(z), _, _) => z.clone(),
            (None, Some(q), Some(ae)) => {
                let code = dequantize_code(q)?;
                self.decode_code(ae, &code)?
            }
            _ => Tensor::zeros(vec![self.z_channels(), h, w]),
        };
        let zv = tape.constant(z_hat);
        let out = self.inverse_on_tape(&mut tape, &p, lr, zv)?;
        PlanarImage::new(tape.value(out).clone())
    }

    fn decode_code(&self, ae: &Autoencoder, code: &LatentCode) -> Result<Tensor> {
        if usize::from(code.n) != self.stages.len() {
            return Err(Error::VariantMismatch(format!(
                "code was produced by a {}-stage model, this one has {}",
                code.n,
                self.stages.len()
            )));
        }
        ae.decode(code, self.z_channels())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Checkpoint layout: magic, version byte, little-endian `u32` length and
    /// JSON config, then each parameter store (network, then autoencoder if
    /// any) as a `u32` count of `(u16 name length, name, u8 rank, u32 dims,
    /// f32 values)` records, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        write_store(&mut out, &self.store);
        if let Some(ae) = &self.ae {
            write_store(&mut out, &ae.store);
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let mut r = Reader { b, pos: 0 };
        if r.take(CHECKPOINT_MAGIC.len(), "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::format("magic", "not a model checkpoint"));
        }
        let version = r.take(1, "version")?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("version", format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32("config")? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(len, "config")?)
            .map_err(|e| Error::format("config", e.to_string()))?;
        let mut model = Self::new(config, 0).map_err(|e| Error::format("config", e.to_string()))?;
        read_store(&mut r, &mut model.store)?;
        if let Some(ae) = &mut model.ae {
            read_store(&mut r, &mut ae.store)?;
        }
        if r.pos != b.len() {
            return Err(Error::format("trailer", format!("{} unexpected trailing bytes", b.len() - r.pos)));
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8] = b"INVRSCKP";
const CHECKPOINT_VERSION: u8 = 1;

fn write_store(out: &mut Vec<u8>, store: &ParamStore) {
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for p in store.iter() {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(p.value.shape().len() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_store(r: &mut Reader<'_>, store: &mut ParamStore) -> Result<()> {
    let count = r.u32("parameter count")? as usize;
    if count != store.len() {
        return Err(Error::format("parameter count", format!("{count}, model has {}", store.len())));
    }
    for p in store.iter_mut() {
        let n = u16::from_le_bytes(r.take(2, "parameter name")?.try_into().expect("2 bytes")) as usize;
        let name = r.take(n, "parameter name")?;
        if name != p.name.as_bytes() {
            return Err(Error::format(
                "parameter name",
                format!("{:?}, expected {:?}", String::from_utf8_lossy(name), p.name),
            ));
        }
        let rank = r.take(1, "parameter rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("parameter shape")? as usize);
        }
        if shape != p.value.shape() {
            return Err(Error::format("parameter shape", format!("{} is {shape:?}, expected {:?}", p.name, p.value.shape())));
        }
        let bytes = r.take(4 * p.value.len(), "parameter data")?;
        for (v, chunk) in p.value.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        }
    }
    Ok(())
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::format(field, "unexpected end of checkpoint"));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }
}
