//! 8-bit PNG containers for rescaled artifacts and datasets.
//!
//! Alpha artifacts are RGBA PNGs. Meta artifacts are RGB PNGs with a `tEXt`
//! chunk under [`LATENT_KEYWORD`] holding the base64 of the quantized code.
//! Encoding is deterministic, so re-encoding a decoded file reproduces it
//! byte for byte.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;

use crate::error::{Error, Result};
use crate::image::{to_u8, PlanarImage};
use crate::latent::QuantizedCode;
use crate::model::RescaleArtifact;
use crate::tensor::Tensor;

pub const LATENT_KEYWORD: &str = "irn-m-latent";

/// Decoded PNG contents: interleaved 8-bit samples plus text chunks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PngPayload {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub pixels: Vec<u8>,
    pub text_chunks: Vec<(String, String)>,
}

impl PngPayload {
    fn validate(&self) -> Result<()> {
        if !matches!(self.channels, 3 | 4) {
            return Err(Error::invalid(format!("PNG payload needs 3 or 4 channels, got {}", self.channels)));
        }
        let n = self.width as usize * self.height as usize * self.channels as usize;
        if self.width == 0 || self.height == 0 || self.pixels.len() != n {
            return Err(Error::invalid(format!(
                "{} samples for a {}x{}x{} payload",
                self.pixels.len(),
                self.width,
                self.height,
                self.channels
            )));
        }
        for (k, _) in &self.text_chunks {
            if k.is_empty() || k.len() > 79 || !k.is_ascii() {
                return Err(Error::invalid(format!("invalid text chunk keyword {k:?}")));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width, self.height);
            enc.set_color(if self.channels == 4 { png::ColorType::Rgba } else { png::ColorType::Rgb });
            enc.set_depth(png::BitDepth::Eight);
            enc.set_compression(png::Compression::Default);
            for (k, t) in &self.text_chunks {
                enc.add_text_chunk(k.clone(), t.clone()).map_err(png_err)?;
            }
            let mut w = enc.write_header().map_err(png_err)?;
            w.write_image_data(&self.pixels).map_err(png_err)?;
            w.finish().map_err(png_err)?;
        }
        Ok(out)
    }

    /// Decodes an 8-bit RGB or RGBA PNG without conversions.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(|e| Error::format("png", e.to_string()))?;
        let info = reader.info();
        let channels = match (info.color_type, info.bit_depth) {
            (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
            (png::ColorType::Rgba, png::BitDepth::Eight) => 4,
            (c, d) => {
                return Err(Error::format("color type", format!("expected 8-bit RGB or RGBA, found {c:?} at {d:?}")));
            }
        };
        let mut pixels = vec![0; reader.output_buffer_size()];
        let frame = reader.next_frame(&mut pixels).map_err(|e| Error::format("png", e.to_string()))?;
        pixels.truncate(frame.buffer_size());
        reader.finish().map_err(|e| Error::format("png", e.to_string()))?;
        let info = reader.info();
        Ok(Self {
            width: info.width,
            height: info.height,
            channels,
            pixels,
            text_chunks: info.uncompressed_latin1_text.iter().map(|c| (c.keyword.clone(), c.text.clone())).collect(),
        })
    }
}

fn png_err(e: png::EncodingError) -> Error {
    Error::invalid(format!("PNG encoding failed: {e}"))
}

pub fn artifact_to_payload(a: &RescaleArtifact) -> Result<PngPayload> {
    let (h, w) = (a.lr_rgb.height(), a.lr_rgb.width());
    if a.lr_rgb.channels() != 3 {
        return Err(Error::invalid(format!("LR image must be RGB, got {} channels", a.lr_rgb.channels())));
    }
    if a.alpha.is_some() && a.meta.is_some() {
        return Err(Error::invalid("an artifact carries either an alpha plane or a latent code, not both"));
    }
    let mut text_chunks = Vec::new();
    let (channels, pixels) = match &a.alpha {
        Some(alpha) => {
            if alpha.shape() != [1, h, w] {
                return Err(Error::invalid(format!("alpha plane {:?} does not match LR {h}x{w}", alpha.shape())));
            }
            let rgba = PlanarImage::new(Tensor::concat_channels(&[a.lr_rgb.tensor(), alpha])?)?;
            (4, rgba.to_u8_interleaved())
        }
        None => (3, a.lr_rgb.to_u8_interleaved()),
    };
    if let Some(code) = &a.meta {
        text_chunks.push((LATENT_KEYWORD.to_string(), BASE64.encode(code.to_bytes())));
    }
    Ok(PngPayload { width: w as u32, height: h as u32, channels, pixels, text_chunks })
}

pub fn payload_to_artifact(p: &PngPayload) -> Result<RescaleArtifact> {
    let (h, w) = (p.height as usize, p.width as usize);
    let img = PlanarImage::from_u8_interleaved(p.channels as usize, h, w, &p.pixels)?;
    let meta = match p.text_chunks.iter().find(|(k, _)| k == LATENT_KEYWORD) {
        Some((_, text)) => {
            let bytes = BASE64.decode(text.trim()).map_err(|e| Error::format(LATENT_KEYWORD, format!("bad base64: {e}")))?;
            Some(QuantizedCode::from_bytes(&bytes)?)
        }
        None => None,
    };
    let lr_rgb = PlanarImage::new(img.tensor().channels(0, 3)?)?;
    let alpha = if p.channels == 4 { Some(img.tensor().channels(3, 1)?) } else { None };
    if alpha.is_some() && meta.is_some() {
        return Err(Error::format(LATENT_KEYWORD, "an RGBA artifact must not also carry a latent code"));
    }
    Ok(RescaleArtifact { lr_rgb, alpha, meta })
}

pub fn encode_artifact(a: &RescaleArtifact) -> Result<Vec<u8>> {
    artifact_to_payload(a)?.encode()
}

pub fn decode_artifact(bytes: &[u8]) -> Result<RescaleArtifact> {
    payload_to_artifact(&PngPayload::decode(bytes)?)
}

pub fn write_artifact(a: &RescaleArtifact, path: &Path) -> Result<()> {
    fs::write(path, encode_artifact(a)?)?;
    Ok(())
}

pub fn read_artifact(path: &Path) -> Result<RescaleArtifact> {
    decode_artifact(&fs::read(path)?)
}

/// Reads any PNG as RGB in `[0, 1]`: grey is replicated, alpha dropped,
/// palettes expanded and 16-bit samples reduced to 8 bits.
pub fn read_rgb(path: &Path) -> Result<PlanarImage> {
    let data_err = |m: String| Error::Data { path: path.to_path_buf(), message: m };
    let bytes = fs::read(path).map_err(|e| data_err(e.to_string()))?;
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| data_err(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| data_err(e.to_string()))?;
    let (h, w) = (frame.height as usize, frame.width as usize);
    let src = frame.color_type.samples();
    let mut rgb = Vec::with_capacity(3 * h * w);
    for px in buf[..frame.buffer_size()].chunks_exact(src) {
        match src {
            1 | 2 => rgb.extend_from_slice(&[px[0]; 3]),
            _ => rgb.extend_from_slice(&px[..3]),
        }
    }
    PlanarImage::from_u8_interleaved(3, h, w, &rgb)
}

pub fn write_rgb(img: &PlanarImage, path: &Path) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::invalid(format!("expected RGB, got {} channels", img.channels())));
    }
    let p = PngPayload {
        width: img.width() as u32,
        height: img.height() as u32,
        channels: 3,
        pixels: img.to_u8_interleaved(),
        text_chunks: Vec::new(),
    };
    fs::write(path, p.encode()?)?;
    Ok(())
}

/// Largest per-sample error 8-bit storage may introduce.
pub const QUANT_BOUND: f32 = 1.0 / 510.0;

/// Sample value after an 8-bit round trip.
pub fn quantize_sample(v: f32) -> f32 {
    f32::from(to_u8(v)) / 255.0
}
