//! Planar float images and colorspace transfers.
//!
//! Pixels live in one of three spaces: `Srgb` (display-encoded), `Linear`
//! (light-linear), and `Sigmoidal` — a symmetric S-curve around mid-gray
//! that compresses both shadows and highlights equally, which is what makes
//! resampling and residual learning in that space resistant to clipping and
//! ringing at either end of the range. Every conversion checks the source
//! tag and stamps the result, so accidental double-encodes fail loudly.
//!
//! Samples are stored as `f32`, but all transfer math runs in `f64`; the
//! scalar transfer functions are exposed directly for callers that need the
//! full-precision curves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::parallel;
use crate::{Error, Result};

/// Which transfer curve the samples of an image are encoded with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colorspace {
    /// sRGB display encoding (what PNG files are assumed to carry).
    Srgb,
    /// Light-linear.
    Linear,
    /// Symmetric sigmoidal working space, see [`SigmoidalParams`].
    Sigmoidal,
}

/// Parameters of the sigmoidal transfer.
///
/// The forward curve maps a sigmoidal-space value `y` to linear light:
///
/// ```text
/// lin(y) = (s(y) - s(0)) / (s(1) - s(0)),   s(y) = 1 / (1 + exp(beta * (alpha - y)))
/// ```
///
/// `alpha` is the inflection point (0.5 centers the curve on mid-gray),
/// `beta` the slope; both endpoints map exactly to 0 and 1. The inverse is
/// closed-form, see [`SigmoidalParams::linear_to_sigmoidal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidalParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for SigmoidalParams {
    fn default() -> Self {
        SigmoidalParams { alpha: 0.5, beta: 8.5 }
    }
}

impl SigmoidalParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigmoidal transfer needs finite alpha and beta > 0, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(SigmoidalParams { alpha, beta })
    }

    fn raw_sigmoid(&self, y: f64) -> f64 {
        1.0 / (1.0 + (self.beta * (self.alpha - y)).exp())
    }

    /// Sigmoidal-space value -> linear light. Input is clamped to [0, 1].
    pub fn sigmoidal_to_linear(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        let s0 = self.raw_sigmoid(0.0);
        let s1 = self.raw_sigmoid(1.0);
        (self.raw_sigmoid(y) - s0) / (s1 - s0)
    }

    /// Linear light -> sigmoidal space (closed-form inverse of the forward
    /// curve). Input is clamped to [0, 1].
    pub fn linear_to_sigmoidal(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let s0 = self.raw_sigmoid(0.0);
        let s1 = self.raw_sigmoid(1.0);
        // t is the un-normalized sigmoid value; u in [0,1] keeps t strictly
        // inside (0,1), so the log never sees a non-positive argument.
        let t = u * (s1 - s0) + s0;
        (self.alpha - (1.0 / t - 1.0).ln() / self.beta).clamp(0.0, 1.0)
    }
}

/// sRGB display encoding -> linear light. Input is clamped to [0, 1].
pub fn srgb_to_linear_scalar(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// Linear light -> sRGB display encoding. Input is clamped to [0, 1].
pub fn linear_to_srgb_scalar(v: f64) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

/// Rec. 709 luma coefficients (applied to linear RGB in this pipeline).
pub const REC709_LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

/// Samples per parallel work item for per-pixel maps.
const MAP_CHUNK: usize = 1 << 14;

/// A planar float image: `channels` full planes of `width * height`
/// samples, plane after plane (no interleaving).
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarImage {
    width: usize,
    height: usize,
    channels: usize,
    space: Colorspace,
    samples: Vec<f32>,
}

impl PlanarImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        space: Colorspace,
        samples: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::BadGeometry(format!("zero-sized image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::ChannelMismatch { expected: 1, found: channels });
        }
        let expected = width * height * channels;
        if samples.len() != expected {
            return Err(Error::BadGeometry(format!(
                "{}x{}x{} image needs {} samples, got {}",
                width,
                height,
                channels,
                expected,
                samples.len()
            )));
        }
        Ok(PlanarImage { width, height, channels, space, samples })
    }

    /// Image filled with a single value.
    pub fn constant(
        width: usize,
        height: usize,
        channels: usize,
        space: Colorspace,
        value: f32,
    ) -> Result<Self> {
        PlanarImage::new(width, height, channels, space, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn space(&self) -> Colorspace {
        self.space
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f32] {
        &mut self.samples
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let wh = self.width * self.height;
        &self.samples[c * wh..(c + 1) * wh]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let wh = self.width * self.height;
        &mut self.samples[c * wh..(c + 1) * wh]
    }

    /// Sample at (x, y) of plane `c` (row-major within the plane).
    pub fn at(&self, c: usize, x: usize, y: usize) -> f32 {
        debug_assert!(c < self.channels && x < self.width && y < self.height);
        self.samples[(c * self.height + y) * self.width + x]
    }

    /// Mean over all samples, accumulated in f64.
    pub fn mean(&self) -> f64 {
        let sum: f64 = self.samples.iter().map(|&v| v as f64).sum();
        sum / self.samples.len() as f64
    }

    /// Copy with `delta` added to every sample. The tag is kept even though
    /// shifted samples may leave [0, 1]; mean-subtracted planes flow through
    /// resampling and the network, which don't care about nominal range.
    pub fn shifted(&self, delta: f32) -> PlanarImage {
        let mut out = self.clone();
        parallel::for_each_chunk_mut(&mut out.samples, MAP_CHUNK, |_, chunk| {
            for v in chunk {
                *v += delta;
            }
        });
        out
    }

    /// Axis-aligned crop; the rectangle must lie fully inside the image.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<PlanarImage> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::BadGeometry(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut samples = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for y in y0..y0 + h {
                samples.extend_from_slice(&plane[y * self.width + x0..y * self.width + x0 + w]);
            }
        }
        PlanarImage::new(w, h, self.channels, self.space, samples)
    }

    /// Single-plane view as an owned 1-channel image.
    pub fn extract_plane(&self, c: usize) -> PlanarImage {
        PlanarImage {
            width: self.width,
            height: self.height,
            channels: 1,
            space: self.space,
            samples: self.plane(c).to_vec(),
        }
    }

    /// Re-tags the samples without touching them. For the rare seams where
    /// a plane changes meaning (e.g. network residuals added onto a plane).
    pub fn with_space(mut self, space: Colorspace) -> PlanarImage {
        self.space = space;
        self
    }

    fn expect_space(&self, expected: Colorspace) -> Result<()> {
        if self.space != expected {
            return Err(Error::SpaceMismatch { expected, found: self.space });
        }
        Ok(())
    }

    fn mapped(&self, space: Colorspace, f: impl Fn(f64) -> f64 + Sync) -> PlanarImage {
        let mut out = self.clone();
        out.space = space;
        parallel::for_each_chunk_mut(&mut out.samples, MAP_CHUNK, |_, chunk| {
            for v in chunk {
                *v = f(*v as f64) as f32;
            }
        });
        out
    }
}

/// sRGB-encoded image -> linear.
pub fn srgb_to_linear(img: &PlanarImage) -> Result<PlanarImage> {
    img.expect_space(Colorspace::Srgb)?;
    Ok(img.mapped(Colorspace::Linear, srgb_to_linear_scalar))
}

/// Linear image -> sRGB encoding.
pub fn linear_to_srgb(img: &PlanarImage) -> Result<PlanarImage> {
    img.expect_space(Colorspace::Linear)?;
    Ok(img.mapped(Colorspace::Srgb, linear_to_srgb_scalar))
}

/// Linear image -> sigmoidal working space.
pub fn linear_to_sigmoidal(img: &PlanarImage, params: SigmoidalParams) -> Result<PlanarImage> {
    img.expect_space(Colorspace::Linear)?;
    Ok(img.mapped(Colorspace::Sigmoidal, |v| params.linear_to_sigmoidal(v)))
}

/// Sigmoidal image -> linear.
pub fn sigmoidal_to_linear(img: &PlanarImage, params: SigmoidalParams) -> Result<PlanarImage> {
    img.expect_space(Colorspace::Sigmoidal)?;
    Ok(img.mapped(Colorspace::Linear, |v| params.sigmoidal_to_linear(v)))
}

/// Converts to `target` through linear, whatever the source tag is.
pub fn convert(img: &PlanarImage, target: Colorspace, params: SigmoidalParams) -> Result<PlanarImage> {
    if img.space() == target {
        return Ok(img.clone());
    }
    let linear = match img.space() {
        Colorspace::Srgb => srgb_to_linear(img)?,
        Colorspace::Linear => img.clone(),
        Colorspace::Sigmoidal => sigmoidal_to_linear(img, params)?,
    };
    Ok(match target {
        Colorspace::Srgb => linear_to_srgb(&linear)?,
        Colorspace::Linear => linear,
        Colorspace::Sigmoidal => linear_to_sigmoidal(&linear, params)?,
    })
}

/// Weighted channel mix of a 3-channel image into one plane; the space tag
/// is preserved. Luma for the pipeline is taken in linear space with the
/// Rec. 709 weights (see [`to_grayscale`]).
pub fn to_grayscale_with(img: &PlanarImage, coeffs: [f64; 3]) -> Result<PlanarImage> {
    if img.channels() != 3 {
        return Err(Error::ChannelMismatch { expected: 3, found: img.channels() });
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut out = vec![0f32; r.len()];
    parallel::for_each_chunk_mut(&mut out, MAP_CHUNK, |i, chunk| {
        let base = i * MAP_CHUNK;
        for (j, v) in chunk.iter_mut().enumerate() {
            let p = base + j;
            *v = (coeffs[0] * r[p] as f64 + coeffs[1] * g[p] as f64 + coeffs[2] * b[p] as f64) as f32;
        }
    });
    PlanarImage::new(img.width(), img.height(), 1, img.space(), out)
}

/// Rec. 709 grayscale.
pub fn to_grayscale(img: &PlanarImage) -> Result<PlanarImage> {
    to_grayscale_with(img, REC709_LUMA)
}

/// Output sample format for [`write_png`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Reads an 8- or 16-bit grayscale or RGB PNG. The result is tagged `Srgb`;
/// alpha or palette layouts are rejected rather than silently flattened.
pub fn read_png(path: &Path) -> Result<PlanarImage> {
    let reader = image::ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let decoded = reader.decode().map_err(|e| Error::PngDecode { path: path.into(), source: e })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let planar = |buf: &[f32], channels: usize| -> Result<PlanarImage> {
        let mut samples = vec![0f32; w * h * channels];
        for c in 0..channels {
            let plane = &mut samples[c * w * h..(c + 1) * w * h];
            for (p, v) in plane.iter_mut().enumerate() {
                *v = buf[p * channels + c];
            }
        }
        PlanarImage::new(w, h, channels, Colorspace::Srgb, samples)
    };
    match decoded {
        image::DynamicImage::ImageLuma8(img) => {
            let buf: Vec<f32> = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
            planar(&buf, 1)
        }
        image::DynamicImage::ImageLuma16(img) => {
            let buf: Vec<f32> = img.as_raw().iter().map(|&v| v as f32 / 65535.0).collect();
            planar(&buf, 1)
        }
        image::DynamicImage::ImageRgb8(img) => {
            let buf: Vec<f32> = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
            planar(&buf, 3)
        }
        image::DynamicImage::ImageRgb16(img) => {
            let buf: Vec<f32> = img.as_raw().iter().map(|&v| v as f32 / 65535.0).collect();
            planar(&buf, 3)
        }
        other => Err(Error::UnsupportedPng(format!(
            "{:?} (only plain 8/16-bit grayscale and RGB)",
            other.color()
        ))),
    }
}

/// Writes a PNG, clamping to [0, 1] and quantizing with round-half-up.
/// Whatever space the samples are in is written as-is.
pub fn write_png(img: &PlanarImage, path: &Path, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let ch = img.channels();
    let quant_u8 = |v: f32| ((v as f64).clamp(0.0, 1.0) * 255.0).round() as u8;
    let quant_u16 = |v: f32| ((v as f64).clamp(0.0, 1.0) * 65535.0).round() as u16;
    let interleave = |p: usize| {
        let (pix, c) = (p / ch, p % ch);
        img.plane(c)[pix]
    };
    let dynimg = match (ch, depth) {
        (1, BitDepth::Eight) => image::DynamicImage::ImageLuma8(
            image::GrayImage::from_vec(w, h, img.plane(0).iter().copied().map(quant_u8).collect())
                .expect("buffer length matches dimensions"),
        ),
        (1, BitDepth::Sixteen) => image::DynamicImage::ImageLuma16(
            image::ImageBuffer::from_vec(w, h, img.plane(0).iter().copied().map(quant_u16).collect())
                .expect("buffer length matches dimensions"),
        ),
        (3, BitDepth::Eight) => image::DynamicImage::ImageRgb8(
            image::RgbImage::from_vec(w, h, (0..img.samples().len()).map(|p| quant_u8(interleave(p))).collect())
                .expect("buffer length matches dimensions"),
        ),
        (3, BitDepth::Sixteen) => image::DynamicImage::ImageRgb16(
            image::ImageBuffer::from_vec(w, h, (0..img.samples().len()).map(|p| quant_u16(interleave(p))).collect())
                .expect("buffer length matches dimensions"),
        ),
        _ => unreachable!("PlanarImage enforces 1 or 3 channels"),
    };
    dynimg
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::PngEncode { path: path.into(), source: e })
}
