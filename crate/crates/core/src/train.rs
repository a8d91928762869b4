//! Joint training of the rescaling network (and, for the meta variant, its
//! autoencoder).
//!
//! The objective is `λ1·L_r + λ2·L_g + λ3·L_d + λ4·L_mse`:
//!
//! * `L_r`: mean absolute HR reconstruction error, with the latent replaced by
//!   zeros (baseline, alpha) or by the autoencoder's reconstruction (meta);
//! * `L_g`: mean squared difference between the LR RGB output and a bicubic
//!   downscale of the patch;
//! * `L_d`: mean squared latent, pulling `z` toward the zero used at inversion;
//! * `L_mse`: mean squared autoencoder reconstruction error of `z`.
//!
//! Every sample of a batch gets its own tape. Gradients are summed in sample
//! order, so a run is bit-for-bit reproducible from its seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{debug, info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PlanarImage;
use crate::imageio::read_rgb;
use crate::metrics::bicubic_downscale;
use crate::model::{RescaleModel, Variant, RGB};
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f32,
    pub lambda2: f32,
    pub lambda3: f32,
    pub lambda4: f32,
}

impl LossWeights {
    /// `(1, s², 1, 1)`, with the autoencoder term only for the meta variant.
    pub fn for_model(scale: usize, variant: Variant) -> Self {
        Self {
            lambda1: 1.0,
            lambda2: (scale * scale) as f32,
            lambda3: 1.0,
            lambda4: if variant == Variant::Meta { 1.0 } else { 0.0 },
        }
    }

    pub fn validate(&self, variant: Variant) -> Result<()> {
        let w = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("loss weights must be finite and non-negative, got {w:?}")));
        }
        if w.iter().all(|&v| v == 0.0) {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if self.lambda4 != 0.0 && variant != Variant::Meta {
            return Err(Error::Config("lambda4 applies only to the meta variant".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub patch_size: usize,
    pub adam: AdamConfig,
    /// Fractions of `iterations` at which the learning rate is multiplied by `decay_factor`.
    pub decay_at: Vec<f64>,
    pub decay_factor: f32,
    pub seed: u64,
    pub freeze_ae: bool,
    /// Loss rows are written to the CSV every this many iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch: 4,
            patch_size: 64,
            adam: AdamConfig::default(),
            decay_at: vec![0.5, 0.75],
            decay_factor: 0.5,
            seed: 0,
            freeze_ae: false,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &RescaleModel) -> Result<()> {
        if self.iterations == 0 || self.batch == 0 || self.log_every == 0 {
            return Err(Error::Config("iterations, batch and log_every must be positive".into()));
        }
        let m = model.config.required_multiple();
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(m) {
            return Err(Error::Config(format!(
                "patch_size {} must be a positive multiple of {m}",
                self.patch_size
            )));
        }
        if self.decay_at.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config(format!("decay_at fractions must lie in [0, 1], got {:?}", self.decay_at)));
        }
        Ok(())
    }

    /// Learning rate in effect at (0-based) iteration `it`.
    pub fn lr_at(&self, it: usize) -> f32 {
        let passed = self
            .decay_at
            .iter()
            .filter(|&&f| it >= (f * self.iterations as f64).round() as usize)
            .count();
        self.adam.lr * self.decay_factor.powi(passed as i32)
    }
}

/// Tape handles of the four loss components.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub l_r: Var,
    pub l_g: Var,
    pub l_d: Var,
    pub l_mse: Option<Var>,
}

fn check_shapes(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::invalid(format!(
            "{what}: shapes {:?} and {:?} differ",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

/// Builds the four components. `ae_pair` is `(z, ẑ)` for the meta variant.
pub fn loss_terms(
    tape: &mut Tape,
    hr: Var,
    recon: Var,
    lr_rgb: Var,
    guidance_lr: Var,
    z: Var,
    ae_pair: Option<(Var, Var)>,
) -> Result<LossTerms> {
    check_shapes(tape, hr, recon, "reconstruction")?;
    check_shapes(tape, lr_rgb, guidance_lr, "guidance")?;
    let d = tape.sub(recon, hr)?;
    let d = tape.abs(d)?;
    let l_r = tape.mean(d)?;
    let g = tape.sub(lr_rgb, guidance_lr)?;
    let g = tape.square(g)?;
    let l_g = tape.mean(g)?;
    let zz = tape.square(z)?;
    let l_d = tape.mean(zz)?;
    let l_mse = match ae_pair {
        Some((z_in, z_out)) => {
            check_shapes(tape, z_in, z_out, "autoencoder pair")?;
            let e = tape.sub(z_out, z_in)?;
            let e = tape.square(e)?;
            Some(tape.mean(e)?)
        }
        None => None,
    };
    Ok(LossTerms { l_r, l_g, l_d, l_mse })
}

/// Weighted sum of the components.
pub fn loss_total(tape: &mut Tape, t: &LossTerms, w: &LossWeights) -> Result<Var> {
    let mut total = tape.scale(t.l_r, w.lambda1)?;
    for (v, lam) in [(Some(t.l_g), w.lambda2), (Some(t.l_d), w.lambda3), (t.l_mse, w.lambda4)] {
        if let Some(v) = v {
            let s = tape.scale(v, lam)?;
            total = tape.add(total, s)?;
        }
    }
    Ok(total)
}

/// Bicubic reference LR for the guidance loss.
pub fn guidance_target(hr: &PlanarImage, scale: usize) -> Result<PlanarImage> {
    bicubic_downscale(hr, scale)
}

/// One row of the loss trace (batch means).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub l_r: f32,
    pub l_g: f32,
    pub l_d: f32,
    pub l_mse: f32,
    pub total: f32,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    /// One record per iteration.
    pub records: Vec<LossRecord>,
}

impl TrainReport {
    /// Mean total loss over records `[start, end)`.
    pub fn mean_total(&self, start: usize, end: usize) -> f32 {
        let s = &self.records[start..end];
        s.iter().map(|r| r.total).sum::<f32>() / s.len() as f32
    }

    /// CSV with a header and every `every`-th iteration plus the last one.
    pub fn to_csv(&self, every: usize) -> String {
        let mut out = String::from("iteration,l_r,l_g,l_d,l_mse,total\n");
        let last = self.records.len().saturating_sub(1);
        for (i, r) in self.records.iter().enumerate() {
            if (r.iteration % every.max(1)) == 0 || i == last {
                let _ = writeln!(
                    out,
                    "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                    r.iteration, r.l_r, r.l_g, r.l_d, r.l_mse, r.total
                );
            }
        }
        out
    }
}

/// PNG files of a directory in name order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let data_err = |m: String| Error::Data { path: dir.to_path_buf(), message: m };
    if !dir.is_dir() {
        return Err(data_err("dataset directory does not exist".into()));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data_err(e.to_string()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every readable PNG of `dir`; unreadable files are skipped with a warning.
pub fn load_dataset(dir: &Path) -> Result<Vec<(PathBuf, PlanarImage)>> {
    let mut out = Vec::new();
    for p in list_images(dir)? {
        match read_rgb(&p) {
            Ok(img) => out.push((p, img)),
            Err(e) => warn!("skipping {}: {e}", p.display()),
        }
    }
    if out.is_empty() {
        return Err(Error::Data { path: dir.to_path_buf(), message: "no readable PNG images".into() });
    }
    Ok(out)
}

fn sample_patch(images: &[PlanarImage], size: usize, rng: &mut ChaCha8Rng) -> Result<PlanarImage> {
    let img = &images[rng.gen_range(0..images.len())];
    let y = rng.gen_range(0..=img.height() - size);
    let x = rng.gen_range(0..=img.width() - size);
    let mut p = img.crop(y, x, size, size)?;
    if rng.gen_bool(0.5) {
        p = p.flip_horizontal();
    }
    if rng.gen_bool(0.5) {
        p = p.flip_vertical();
    }
    Ok(p)
}

/// Forward, inverse and loss for one patch; returns the component values and
/// accumulates gradients into the model's stores.
fn train_sample(model: &mut RescaleModel, patch: &PlanarImage, w: &LossWeights, freeze_ae: bool) -> Result<[f32; 5]> {
    let guidance = guidance_target(patch, model.config.scale)?;
    let mut tape = Tape::new();
    let p = model.store.bind(&mut tape);
    let ae_p = model.ae.as_ref().map(|ae| if freeze_ae { ae.store.bind_frozen(&mut tape) } else { ae.store.bind(&mut tape) });
    let hr = tape.constant(patch.tensor().clone());
    let g = tape.constant(guidance.into_tensor());
    let fv = model.forward_on_tape(&mut tape, &p, hr)?;
    let lr_rgb = tape.slice_channels(fv.lr, 0, RGB)?;
    let (z_hat, pair) = match (&model.ae, &ae_p) {
        (Some(ae), Some(ap)) => {
            let s = ae.encode_on_tape(&mut tape, ap, fv.z)?;
            let zh = ae.decode_on_tape(&mut tape, ap, s)?;
            (zh, Some((fv.z, zh)))
        }
        _ => (tape.constant(Tensor::zeros(tape.shape(fv.z).to_vec())), None),
    };
    let recon = model.inverse_on_tape(&mut tape, &p, fv.lr, z_hat)?;
    let terms = loss_terms(&mut tape, hr, recon, lr_rgb, g, fv.z, pair)?;
    let total = loss_total(&mut tape, &terms, w)?;
    let vals = [
        tape.value(terms.l_r).item(),
        tape.value(terms.l_g).item(),
        tape.value(terms.l_d).item(),
        terms.l_mse.map_or(0.0, |v| tape.value(v).item()),
        tape.value(total).item(),
    ];
    let grads = tape.backward(total)?;
    model.store.accumulate(&p, &grads);
    if let (Some(ae), Some(ap)) = (&mut model.ae, &ae_p) {
        if !freeze_ae {
            ae.store.accumulate(ap, &grads);
        }
    }
    Ok(vals)
}

/// Runs `tc.iterations` Adam steps on random patches of `images`.
pub fn train(model: &mut RescaleModel, images: &[PlanarImage], tc: &TrainConfig, w: &LossWeights) -> Result<TrainReport> {
    tc.validate(model)?;
    w.validate(model.config.variant)?;
    if images.is_empty() {
        return Err(Error::Config("training needs at least one image".into()));
    }
    if let Some(small) = images.iter().find(|i| i.height() < tc.patch_size || i.width() < tc.patch_size) {
        return Err(Error::Config(format!(
            "a {}x{} image cannot hold {p}x{p} patches",
            small.height(),
            small.width(),
            p = tc.patch_size
        )));
    }
    let freeze_ae = tc.freeze_ae || model.ae.as_ref().is_some_and(|ae| ae.config.frozen_during_joint_training);
    let adam = Adam::new(tc.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut report = TrainReport { records: Vec::with_capacity(tc.iterations) };
    model.store.zero_grad();
    if let Some(ae) = &mut model.ae {
        ae.store.zero_grad();
    }
    for it in 0..tc.iterations {
        let mut sums = [0.0f32; 5];
        for _ in 0..tc.batch {
            let patch = sample_patch(images, tc.patch_size, &mut rng)?;
            let v = train_sample(model, &patch, w, freeze_ae)?;
            sums.iter_mut().zip(v).for_each(|(s, v)| *s += v);
        }
        let inv = 1.0 / tc.batch as f32;
        let lr = tc.lr_at(it);
        model.store.scale_grad(inv);
        adam.step(&mut model.store, lr);
        if let Some(ae) = &mut model.ae {
            if !freeze_ae {
                ae.store.scale_grad(inv);
                adam.step(&mut ae.store, lr);
            }
        }
        let m = sums.map(|s| s * inv);
        let rec = LossRecord { iteration: it, l_r: m[0], l_g: m[1], l_d: m[2], l_mse: m[3], total: m[4] };
        if it % tc.log_every == 0 || it + 1 == tc.iterations {
            info!("iter {it}: total {:.5} (L_r {:.5}, L_g {:.5}, L_d {:.5}, L_mse {:.5})", rec.total, rec.l_r, rec.l_g, rec.l_d, rec.l_mse);
        } else {
            debug!("iter {it}: total {:.5}", rec.total);
        }
        report.records.push(rec);
    }
    Ok(report)
}
