//! Command-line front end.
//!
//! Settings come from an optional JSON run config; the global flags
//! `--seed`, `--scale`, `--variant` and `--crop-border` override it. Exit
//! codes: 0 success, 1 runtime failure, 2 configuration error, 3 data error,
//! 4 variant mismatch between a checkpoint and a file or flag.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{bicubic_roundtrip, mean_psnr, mean_ssim};
use crate::image::PlanarImage;
use crate::imageio::{decode_artifact, encode_artifact, read_artifact, read_rgb, write_artifact, write_rgb};
use crate::invnet::{SplitMode, SplitSpec};
use crate::latent::{pretrain_ae, AeConfig, PretrainConfig};
use crate::metrics::{evaluate, MetricReport};
use crate::model::{ModelConfig, RescaleModel, Variant};
use crate::train::{list_images, load_dataset, train, LossWeights, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "invrescale", version, about = "Invertible image rescaling with alpha or metadata latents")]
pub struct Cli {
    /// JSON run config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub scale: Option<usize>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// Pixels dropped from each edge before scoring.
    #[arg(long, global = true)]
    pub crop_border: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Model,
    Bicubic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a directory of PNG images.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Loss trace CSV to write.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Start from this checkpoint instead of a fresh model.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Pretrain the autoencoder of a meta model on synthetic latents.
    PretrainAe {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Downscale an image to an LR artifact PNG.
    Downscale {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Upscale an artifact PNG; the variant is read from the file.
    Upscale {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        output: PathBuf,
    },
    /// Score a dataset directory and write a CSV report.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "model")]
        method: Method,
    },
    /// Downscale, store and upscale one image, then print its scores.
    Roundtrip {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
        /// Optional reconstruction PNG.
        output: Option<PathBuf>,
    },
}

impl clap::ValueEnum for Variant {
    fn value_variants<'a>() -> &'a [Self] {
        &[Variant::Baseline, Variant::Alpha, Variant::Meta]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            Variant::Baseline => "baseline",
            Variant::Alpha => "alpha",
            Variant::Meta => "meta",
        }))
    }
}

/// Contents of a `--config` file. Every key is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Seeds model initialization, patch sampling and pretraining.
    pub seed: u64,
    pub scale: usize,
    pub variant: Variant,
    pub blocks_per_stage: usize,
    pub subnet_width: usize,
    /// First-stage split; defaults to pre-split with mean init for alpha.
    pub split_mode: Option<SplitMode>,
    pub alpha_avg_init: Option<bool>,
    pub ae: Option<AeConfig>,
    pub train: TrainConfig,
    pub loss: Option<LossWeights>,
    pub pretrain: PretrainConfig,
    pub crop_border: usize,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub loss_csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::new(Variant::Alpha, 2);
        Self {
            seed: 0,
            scale: m.scale,
            variant: m.variant,
            blocks_per_stage: m.blocks_per_stage,
            subnet_width: m.subnet_width,
            split_mode: None,
            alpha_avg_init: None,
            ae: None,
            train: TrainConfig::default(),
            loss: None,
            pretrain: PretrainConfig::default(),
            crop_border: 0,
            data_dir: None,
            checkpoint: None,
            loss_csv: None,
            report: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let mut m = ModelConfig::new(self.variant, self.scale)
            .with_blocks(self.blocks_per_stage)
            .with_width(self.subnet_width);
        if self.split_mode.is_some() || self.alpha_avg_init.is_some() {
            let mode = self.split_mode.unwrap_or(m.split.mode);
            let avg = self.alpha_avg_init.unwrap_or(mode == SplitMode::PreSplitAlpha);
            m.split = SplitSpec::new(mode, avg, crate::model::RGB);
        }
        if self.variant == Variant::Meta {
            m.ae = Some(self.ae.unwrap_or_default());
        } else if self.ae.is_some() {
            return Err(Error::Config("an \"ae\" section needs variant meta".into()));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn loss_weights(&self) -> LossWeights {
        self.loss.unwrap_or_else(|| LossWeights::for_model(self.scale, self.variant))
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Data { .. } | Error::Format { .. } => 3,
        Error::VariantMismatch(_) => 4,
        _ => 1,
    }
}

/// Parses the process arguments and runs the command; returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> i32 {
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut rc = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        rc.seed = s;
    }
    if let Some(s) = cli.scale {
        rc.scale = s;
    }
    if let Some(v) = cli.variant {
        rc.variant = v;
    }
    if let Some(b) = cli.crop_border {
        rc.crop_border = b;
    }
    rc.train.seed = rc.seed;
    rc.pretrain.seed = rc.seed;
    Ok(rc)
}

fn required(v: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    v.or_else(|| fallback.clone()).ok_or_else(|| Error::Config(format!("no {what} given (flag or config)")))
}

fn check_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => {
            Err(Error::Config(format!("output directory {} does not exist", d.display())))
        }
        _ => Ok(()),
    }
}

fn load_model(path: &Path, rc: &RunConfig, cli: &Cli) -> Result<RescaleModel> {
    if !path.is_file() {
        return Err(Error::Data { path: path.to_path_buf(), message: "checkpoint not found".into() });
    }
    let m = RescaleModel::load(path)?;
    if let Some(v) = cli.variant {
        if v != m.config.variant {
            return Err(Error::VariantMismatch(format!(
                "--variant {v} but {} holds a {} model",
                path.display(),
                m.config.variant
            )));
        }
    }
    if cli.scale.is_some() && rc.scale != m.config.scale {
        return Err(Error::Config(format!("--scale {} but the checkpoint is {}x", rc.scale, m.config.scale)));
    }
    Ok(m)
}

fn read_input(path: &Path) -> Result<PlanarImage> {
    if !path.is_file() {
        return Err(Error::Data { path: path.to_path_buf(), message: "input image not found".into() });
    }
    read_rgb(path)
}

fn dispatch(cli: Cli) -> Result<()> {
    let rc = resolve(&cli)?;
    match &cli.command {
        Command::Train { data, out, loss_csv, init, iterations } => {
            let data = required(data.clone(), &rc.data_dir, "data directory")?;
            let out = required(out.clone(), &rc.checkpoint, "output checkpoint")?;
            let csv = loss_csv.clone().or_else(|| rc.loss_csv.clone());
            check_output(&out)?;
            if let Some(c) = &csv {
                check_output(c)?;
            }
            let mut tc = rc.train.clone();
            if let Some(n) = iterations {
                tc.iterations = *n;
            }
            let images: Vec<PlanarImage> = load_dataset(&data)?.into_iter().map(|(_, i)| i).collect();
            let mut model = match init {
                Some(p) => load_model(p, &rc, &cli)?,
                None => {
                    let mut m = RescaleModel::new(rc.model_config()?, rc.seed)?;
                    if let Some(ae) = &mut m.ae {
                        if ae.config.pretrained {
                            info!("pretraining autoencoder for {} steps", rc.pretrain.steps);
                            pretrain_ae(ae, &rc.pretrain)?;
                        }
                    }
                    m
                }
            };
            let w = rc.loss.unwrap_or_else(|| LossWeights::for_model(model.config.scale, model.config.variant));
            let report = train(&mut model, &images, &tc, &w)?;
            model.save(&out)?;
            if let Some(c) = csv {
                fs::write(&c, report.to_csv(tc.log_every))?;
            }
            println!("trained {} iterations, final loss {:.6}", tc.iterations, report.records.last().map_or(0.0, |r| r.total));
            Ok(())
        }
        Command::PretrainAe { out, steps, loss_csv } => {
            let out = required(out.clone(), &rc.checkpoint, "output checkpoint")?;
            check_output(&out)?;
            if rc.variant != Variant::Meta {
                return Err(Error::Config(format!("pretrain-ae needs variant meta, got {}", rc.variant)));
            }
            let mut pc = rc.pretrain;
            if let Some(s) = steps {
                pc.steps = *s;
            }
            let mut model = RescaleModel::new(rc.model_config()?, rc.seed)?;
            let ae = model.ae.as_mut().expect("meta model has an autoencoder");
            let report = pretrain_ae(ae, &pc)?;
            model.save(&out)?;
            if let Some(c) = loss_csv {
                let mut s = String::from("step,mse\n");
                for (i, l) in report.losses.iter().enumerate() {
                    let _ = writeln!(s, "{i},{l:.8e}");
                }
                fs::write(c, s)?;
            }
            println!("pretrained autoencoder, final MSE {:.6}", report.final_loss());
            Ok(())
        }
        Command::Downscale { checkpoint, input, output } => {
            check_output(output)?;
            let model = load_model(checkpoint, &rc, &cli)?;
            let hr = read_input(input)?;
            let (artifact, _) = model.downscale(&hr)?;
            write_artifact(&artifact, output)?;
            Ok(())
        }
        Command::Upscale { checkpoint, input, output } => {
            check_output(output)?;
            let model = load_model(checkpoint, &rc, &cli)?;
            if !input.is_file() {
                return Err(Error::Data { path: input.clone(), message: "input artifact not found".into() });
            }
            let artifact = read_artifact(input)?;
            let hr = model.upscale(&artifact, None)?;
            write_rgb(&hr, output)?;
            Ok(())
        }
        Command::Eval { checkpoint, data, report, method } => {
            let data = required(data.clone(), &rc.data_dir, "data directory")?;
            let report = required(report.clone(), &rc.report, "report path")?;
            check_output(&report)?;
            let model = match method {
                Method::Model => Some(load_model(&required(checkpoint.clone(), &rc.checkpoint, "checkpoint")?, &rc, &cli)?),
                Method::Bicubic => None,
            };
            let scale = model.as_ref().map_or(rc.scale, |m| m.config.scale);
            cmd_eval(model.as_ref(), scale, &data, &report, rc.crop_border)
        }
        Command::Roundtrip { checkpoint, input, output } => {
            if let Some(o) = output {
                check_output(o)?;
            }
            let model = load_model(checkpoint, &rc, &cli)?;
            let hr = read_input(input)?.crop_to_multiple(model.config.required_multiple())?;
            let (artifact, _) = model.downscale(&hr)?;
            let bytes = encode_artifact(&artifact)?;
            let recon = model.upscale(&decode_artifact(&bytes)?, None)?.quantize_8bit();
            let r = evaluate(&hr, &recon, rc.crop_border)?;
            if let Some(o) = output {
                write_rgb(&recon, o)?;
            }
            println!("artifact {} bytes, Y-PSNR {:.4} dB, SSIM {:.6}", bytes.len(), r.psnr_db, r.ssim);
            Ok(())
        }
    }
}

fn cmd_eval(model: Option<&RescaleModel>, scale: usize, data: &Path, report: &Path, crop: usize) -> Result<()> {
    let paths = list_images(data)?;
    let dataset = data.file_name().map_or_else(|| data.display().to_string(), |n| n.to_string_lossy().into_owned());
    let method = if model.is_some() { "model" } else { "bicubic" };
    let mut rows = String::from("dataset,image,method,scale,psnr_db,ssim\n");
    let mut scores: Vec<MetricReport> = Vec::new();
    for p in &paths {
        let img = match read_rgb(p) {
            Ok(i) => i,
            Err(e) => {
                warn!("skipping {}: {e}", p.display());
                continue;
            }
        };
        let multiple = model.map_or(scale, |m| m.config.required_multiple());
        let hr = img.crop_to_multiple(multiple)?;
        let recon = match model {
            Some(m) => crate::eval::roundtrip(m, &hr)?,
            None => bicubic_roundtrip(&hr, scale)?,
        };
        let r = evaluate(&hr, &recon, crop)?;
        let name = p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        let _ = writeln!(rows, "{dataset},{name},{method},{scale},{:.6},{:.6}", r.psnr_db, r.ssim);
        scores.push(r);
    }
    if scores.is_empty() {
        return Err(Error::Data { path: data.to_path_buf(), message: "no image could be scored".into() });
    }
    fs::write(report, rows)?;
    println!(
        "{dataset}: {} images, {method} x{scale}, mean Y-PSNR {:.4} dB, mean SSIM {:.6}",
        scores.len(),
        mean_psnr(&scores),
        mean_ssim(&scores)
    );
    Ok(())
}
