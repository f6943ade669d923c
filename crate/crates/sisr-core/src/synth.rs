//! Seeded procedural images for tests and demos.
//!
//! Pure per-pixel noise is useless for exercising a resampling pipeline —
//! nothing about it survives degradation. A scene here is a smooth diagonal
//! shading ramp plus a few Gaussian bumps and one soft-edged band, which is
//! enough structure for degrade/upsample round trips, training runs and
//! benchmark datasets to behave like they would on photographs.

use std::path::{Path, PathBuf};

use rand::prelude::*;

use crate::image::{write_png, BitDepth, Colorspace, PlanarImage};
use crate::{Error, Result};

/// Deterministic synthetic scene in [0, 1], tagged sRGB. Channels draw
/// their layout parameters from one seeded stream, so they are correlated
/// the way color planes of a real photo are (same geometry, different
/// shading) and the whole image is a pure function of its arguments.
pub fn scene(width: usize, height: usize, channels: usize, seed: u64) -> Result<PlanarImage> {
    if channels != 1 && channels != 3 {
        return Err(Error::ChannelMismatch { expected: 3, found: channels });
    }
    let mut rng = StdRng::seed_from_u64(seed);
    // geometry shared by all channels
    let blob_geom: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(40.0..160.0), // 1/(2 sigma^2) in uv units
            )
        })
        .collect();
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (ex, ey) = (angle.cos(), angle.sin());
    let edge_off = rng.random_range(0.35..0.65) * (ex + ey);
    let edge_sharp = rng.random_range(8.0..18.0);

    let mut samples = vec![0f32; width * height * channels];
    for c in 0..channels {
        // shading is per channel
        let gx = rng.random_range(-0.5..0.5);
        let gy = rng.random_range(-0.5..0.5);
        let blob_amp: Vec<f64> = (0..blob_geom.len()).map(|_| rng.random_range(-0.22..0.22)).collect();
        let edge_amp = rng.random_range(0.18..0.4);
        let base = rng.random_range(0.42..0.58);
        let plane = &mut samples[c * width * height..(c + 1) * width * height];
        for y in 0..height {
            let v = (y as f64 + 0.5) / height as f64;
            for x in 0..width {
                let u = (x as f64 + 0.5) / width as f64;
                let mut t = base + gx * (u - 0.5) + gy * (v - 0.5);
                for (&(cx, cy, k), &amp) in blob_geom.iter().zip(&blob_amp) {
                    let d2 = (u - cx) * (u - cx) + (v - cy) * (v - cy);
                    t += amp * (-k * d2).exp();
                }
                let proj = ex * u + ey * v - edge_off;
                t += edge_amp * (1.0 / (1.0 + (-edge_sharp * proj).exp()) - 0.5);
                plane[y * width + x] = t.clamp(0.0, 1.0) as f32;
            }
        }
    }
    PlanarImage::new(width, height, channels, Colorspace::Srgb, samples)
}

/// A [`scene`] overlaid with a few oriented sinusoidal gratings at 5–10 px
/// wavelength. Downscaling by 2 damages such detail visibly but does not
/// destroy it, which is exactly the regime where a learned upscaler can
/// out-resolve a fixed kernel; use this for training/benchmark material and
/// plain [`scene`] where smoothness is wanted.
pub fn textured(width: usize, height: usize, channels: usize, seed: u64) -> Result<PlanarImage> {
    let mut img = scene(width, height, channels, seed)?;
    // decouple the grating stream from the scene stream
    let mut rng = StdRng::seed_from_u64(seed ^ 0x7e37_ed2a_9c4b_0511);
    let gratings: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            let wavelength = rng.random_range(5.0..10.0); // pixels
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.05..0.10);
            (angle, wavelength, phase, amp)
        })
        .collect();
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let samples = img.samples_mut();
    for y in 0..h {
        for x in 0..w {
            let mut t = 0.0;
            for &(angle, wavelength, phase, amp) in &gratings {
                let proj = x as f64 * angle.cos() + y as f64 * angle.sin();
                t += amp * (std::f64::consts::TAU * proj / wavelength + phase).sin();
            }
            for plane in 0..c {
                let s = &mut samples[plane * w * h + y * w + x];
                *s = (*s + t as f32).clamp(0.0, 1.0);
            }
        }
    }
    Ok(img)
}

/// Writes `count` scenes as 8-bit PNGs named `img_00.png`, `img_01.png`, …
/// into `dir` (created if missing), returning the paths in name order.
/// Each image gets a distinct seed derived from `seed`.
pub fn write_dataset(
    dir: &Path,
    count: usize,
    width: usize,
    height: usize,
    channels: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = scene(width, height, channels, seed.wrapping_add(i as u64))?;
        let path = dir.join(format!("img_{i:02}.png"));
        write_png(&img, &path, BitDepth::Eight)?;
        paths.push(path);
    }
    Ok(paths)
}
