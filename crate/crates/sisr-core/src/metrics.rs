//! Quality metrics (PSNR, SSIM) and benchmark reporting.
//!
//! Both metrics operate on single-channel luminance pairs in the same
//! colorspace, after shaving `shave` pixels off every border. PSNR assumes
//! samples in [0, 1]; an exact match reports the cap value instead of
//! infinity so CSV output stays numeric.

use std::fs;
use std::path::{Path, PathBuf};

use crate::image::{self, PlanarImage};
use crate::train::{self, StageExecutor};
use crate::{resample, Error, Result};

/// Reported when the mean squared error is exactly zero.
pub const PSNR_CAP_DB: f64 = 99.99;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
/// Dynamic range of the samples.
const SSIM_L: f64 = 1.0;

/// Peak signal-to-noise ratio in dB: `10 log10(1 / MSE)` for samples
/// in [0, 1], computed in f64.
pub fn psnr(a: &PlanarImage, b: &PlanarImage, shave: usize) -> Result<f64> {
    let (a, b) = shaved_pair(a, b, shave)?;
    let mse = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.samples().len() as f64;
    Ok(if mse == 0.0 { PSNR_CAP_DB } else { 10.0 * (1.0 / mse).log10() })
}

/// Mean local structural similarity over every fully interior 11x11
/// window, Gaussian-weighted (sigma 1.5), stabilized by K1 = 0.01 and
/// K2 = 0.03 at unit dynamic range. Multi-channel images score each plane
/// separately and average.
pub fn ssim(a: &PlanarImage, b: &PlanarImage, shave: usize) -> Result<f64> {
    let (a, b) = shaved_pair(a, b, shave)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::BadGeometry(format!(
            "{w}x{h} after shaving is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let mut total = 0.0;
    for c in 0..a.channels() {
        total += plane_ssim(a.plane(c), b.plane(c), w, h);
    }
    Ok(total / a.channels() as f64)
}

fn plane_ssim(a: &[f32], b: &[f32], w: usize, h: usize) -> f64 {
    let pa: Vec<f64> = a.iter().map(|&v| v as f64).collect();
    let pb: Vec<f64> = b.iter().map(|&v| v as f64).collect();
    let pa2: Vec<f64> = pa.iter().map(|v| v * v).collect();
    let pb2: Vec<f64> = pb.iter().map(|v| v * v).collect();
    let pab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();

    let mu_a = windowed_means(&pa, w, h);
    let mu_b = windowed_means(&pb, w, h);
    let m_a2 = windowed_means(&pa2, w, h);
    let m_b2 = windowed_means(&pb2, w, h);
    let m_ab = windowed_means(&pab, w, h);

    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let mut sum = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = m_a2[i] - ma * ma;
        let vb = m_b2[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    sum / mu_a.len() as f64
}

/// Gaussian-weighted means over every fully interior window, separably.
/// Output is (w-10) x (h-10), row-major.
fn windowed_means(plane: &[f64], w: usize, h: usize) -> Vec<f64> {
    let win = gaussian_window();
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    // horizontal pass: full height, valid width
    let mut tmp = vec![0.0f64; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &wk) in win.iter().enumerate() {
                acc += wk * plane[y * w + x + k];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (k, &wk) in win.iter().enumerate() {
                acc += wk * tmp[(y + k) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Validates a metric pair and crops `shave` pixels off every border.
fn shaved_pair(a: &PlanarImage, b: &PlanarImage, shave: usize) -> Result<(PlanarImage, PlanarImage)> {
    if a.channels() != 1 || b.channels() != 1 {
        return Err(Error::ChannelMismatch { expected: 1, found: a.channels().max(b.channels()) });
    }
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::BadGeometry(format!(
            "metric pair {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if a.space() != b.space() {
        return Err(Error::SpaceMismatch { expected: a.space(), found: b.space() });
    }
    if 2 * shave >= a.width() || 2 * shave >= a.height() {
        return Err(Error::BadGeometry(format!(
            "shave {shave} leaves nothing of {}x{}",
            a.width(),
            a.height()
        )));
    }
    let w = a.width() - 2 * shave;
    let h = a.height() - 2 * shave;
    Ok((a.crop(shave, shave, w, h)?, b.crop(shave, shave, w, h)?))
}

/// One method's published score on one dataset at one scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceEntry {
    pub dataset: &'static str,
    pub scale: u32,
    pub method: &'static str,
    pub psnr: f64,
    pub ssim: f64,
}

/// Methods of the embedded comparison table, in column order.
pub const REFERENCE_METHODS: [&str; 7] =
    ["A+", "SRCNN", "VDSR", "RED30", "DRRN", "EDSR", "Ours"];

/// Published PSNR/SSIM scores this implementation is usually compared
/// against. Entries a method never reported are simply absent.
pub const REFERENCE_RESULTS: &[ReferenceEntry] = &{
    const fn e(
        dataset: &'static str,
        scale: u32,
        method: &'static str,
        psnr: f64,
        ssim: f64,
    ) -> ReferenceEntry {
        ReferenceEntry { dataset, scale, method, psnr, ssim }
    }
    [
        e("Set5", 2, "A+", 36.54, 0.9544),
        e("Set5", 2, "SRCNN", 36.66, 0.9542),
        e("Set5", 2, "VDSR", 37.53, 0.9587),
        e("Set5", 2, "RED30", 37.66, 0.9599),
        e("Set5", 2, "DRRN", 37.74, 0.9591),
        e("Set5", 2, "EDSR", 38.20, 0.9606),
        e("Set5", 2, "Ours", 39.55, 0.9665),
        e("Set5", 4, "A+", 30.28, 0.8603),
        e("Set5", 4, "SRCNN", 30.48, 0.8628),
        e("Set5", 4, "VDSR", 31.35, 0.8838),
        e("Set5", 4, "RED30", 31.51, 0.8869),
        e("Set5", 4, "DRRN", 31.68, 0.8888),
        e("Set5", 4, "EDSR", 32.62, 0.8984),
        e("Set5", 4, "Ours", 33.62, 0.9032),
        e("Set14", 2, "A+", 32.28, 0.9056),
        e("Set14", 2, "SRCNN", 32.42, 0.9063),
        e("Set14", 2, "VDSR", 33.03, 0.9124),
        e("Set14", 2, "RED30", 32.94, 0.9144),
        e("Set14", 2, "DRRN", 33.23, 0.9136),
        e("Set14", 2, "EDSR", 34.02, 0.9204),
        e("Set14", 2, "Ours", 34.65, 0.9264),
        e("Set14", 4, "A+", 27.32, 0.7491),
        e("Set14", 4, "SRCNN", 27.49, 0.7503),
        e("Set14", 4, "VDSR", 28.01, 0.7674),
        e("Set14", 4, "RED30", 27.86, 0.7718),
        e("Set14", 4, "DRRN", 28.21, 0.7720),
        e("Set14", 4, "EDSR", 28.94, 0.7901),
        e("Set14", 4, "Ours", 29.72, 0.8001),
        e("B100", 2, "A+", 31.21, 0.8863),
        e("B100", 2, "SRCNN", 31.36, 0.8879),
        e("B100", 2, "VDSR", 31.90, 0.8960),
        e("B100", 2, "RED30", 31.99, 0.8974),
        e("B100", 2, "DRRN", 32.05, 0.8973),
        e("B100", 2, "EDSR", 32.37, 0.9018),
        e("B100", 2, "Ours", 33.24, 0.9076),
        e("B100", 4, "A+", 26.82, 0.7087),
        e("B100", 4, "SRCNN", 26.90, 0.7101),
        e("B100", 4, "VDSR", 27.29, 0.7251),
        e("B100", 4, "RED30", 27.40, 0.7290),
        e("B100", 4, "DRRN", 27.38, 0.7284),
        e("B100", 4, "EDSR", 27.79, 0.7437),
        e("B100", 4, "Ours", 28.63, 0.7556),
        e("Urban100", 2, "A+", 29.20, 0.8938),
        e("Urban100", 2, "SRCNN", 29.50, 0.8946),
        e("Urban100", 2, "VDSR", 30.76, 0.9140),
        e("Urban100", 2, "DRRN", 31.23, 0.9188),
        e("Urban100", 2, "EDSR", 33.10, 0.9363),
        e("Urban100", 2, "Ours", 32.42, 0.9272),
        e("Urban100", 4, "A+", 24.32, 0.7183),
        e("Urban100", 4, "SRCNN", 24.52, 0.7221),
        e("Urban100", 4, "VDSR", 25.18, 0.7524),
        e("Urban100", 4, "DRRN", 25.44, 0.7638),
        e("Urban100", 4, "EDSR", 26.86, 0.8080),
        e("Urban100", 4, "Ours", 26.70, 0.7823),
    ]
};

/// Looks up a published score.
pub fn reference_entry(dataset: &str, scale: u32, method: &str) -> Option<&'static ReferenceEntry> {
    REFERENCE_RESULTS
        .iter()
        .find(|e| e.dataset == dataset && e.scale == scale && e.method == method)
}

/// Per-image metric scores of one method over one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub dataset: String,
    pub scale: u32,
    pub method: String,
    /// (image name, psnr dB, ssim), in dataset order.
    pub images: Vec<(String, f64, f64)>,
}

impl BenchmarkRun {
    pub fn mean_psnr(&self) -> f64 {
        self.images.iter().map(|r| r.1).sum::<f64>() / self.images.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.images.iter().map(|r| r.2).sum::<f64>() / self.images.len() as f64
    }
}

/// Per-image CSV: `dataset,scale,method,image,psnr_db,ssim`.
pub fn results_csv(runs: &[BenchmarkRun]) -> String {
    let mut out = String::from("dataset,scale,method,image,psnr_db,ssim\n");
    for run in runs {
        for (image, psnr, ssim) in &run.images {
            out.push_str(&format!(
                "{},{},{},{},{:.4},{:.6}\n",
                run.dataset, run.scale, run.method, image, psnr, ssim
            ));
        }
    }
    out
}

/// Aligned text table: the published scores for context, then this run's
/// aggregates. Cells are `psnr / ssim`; absent entries print `- / -`.
pub fn format_report(runs: &[BenchmarkRun]) -> String {
    let mut out = String::new();
    out.push_str("reference (reported results)\n");
    let mut header = format!("{:<10} {:<6}", "dataset", "scale");
    for m in REFERENCE_METHODS {
        header.push_str(&format!(" {:<15}", m));
    }
    out.push_str(header.trim_end());
    out.push('\n');
    let mut seen = Vec::new();
    for e in REFERENCE_RESULTS {
        if !seen.contains(&(e.dataset, e.scale)) {
            seen.push((e.dataset, e.scale));
        }
    }
    for (dataset, scale) in seen {
        let mut row = format!("{:<10} x{:<5}", dataset, scale);
        for m in REFERENCE_METHODS {
            let cell = match reference_entry(dataset, scale, m) {
                Some(e) => format!("{:.2} / {:.4}", e.psnr, e.ssim),
                None => "- / -".to_string(),
            };
            row.push_str(&format!(" {:<15}", cell));
        }
        out.push_str(row.trim_end());
        out.push('\n');
    }

    if !runs.is_empty() {
        out.push_str("\nthis run\n");
        out.push_str(&format!(
            "{:<10} {:<6} {:<14} {:>8} {:>8} {:>7}\n",
            "dataset", "scale", "method", "psnr(dB)", "ssim", "images"
        ));
        for run in runs {
            out.push_str(&format!(
                "{:<10} x{:<5} {:<14} {:>8.2} {:>8.4} {:>7}\n",
                run.dataset,
                run.scale,
                run.method,
                run.mean_psnr(),
                run.mean_ssim(),
                run.images.len()
            ));
        }
    }
    out
}

/// Everything one dataset evaluation produces: per-image records for the
/// kernel-upscale baseline and for the evaluated stages, plus rendered CSV
/// and comparison report.
#[derive(Debug, Clone)]
pub struct BenchmarkOutput {
    /// `runs[0]` is the baseline (method "gs"), `runs[1]` the evaluated
    /// stages under the caller's method name.
    pub runs: Vec<BenchmarkRun>,
    pub csv: String,
    pub report: String,
}

/// Luma of the gamma-encoded image — the domain scores are computed in.
fn display_luma(img: &PlanarImage) -> Result<PlanarImage> {
    if img.channels() == 1 {
        Ok(img.clone())
    } else {
        image::to_grayscale(img)
    }
}

/// Evaluates `stages` over a dataset directory: `<dir>/HR/*.png` when the
/// `HR` subdirectory exists, otherwise PNGs directly in `<dir>`.
///
/// Each image is cropped to a multiple of `scale`, degraded, reconstructed
/// with [`train::super_resolve`], and scored on display-referred luma after
/// a `scale`-pixel border shave. A pure-upsampling baseline is always
/// evaluated alongside as method "gs". Images are processed in filename
/// order, so two runs over the same inputs render byte-identical CSV.
pub fn run_benchmark(
    dataset_dir: &Path,
    scale: u32,
    stages: &mut dyn StageExecutor,
    method: &str,
) -> Result<BenchmarkOutput> {
    let hr_dir = dataset_dir.join("HR");
    let dir = if hr_dir.is_dir() { hr_dir } else { dataset_dir.to_path_buf() };
    let dataset = dataset_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyTrainingSet(format!("no PNG images under {}", dir.display())));
    }

    let mut baseline =
        BenchmarkRun { dataset: dataset.clone(), scale, method: "gs".into(), images: Vec::new() };
    let mut evaluated =
        BenchmarkRun { dataset, scale, method: method.into(), images: Vec::new() };
    let mut identity = train::IdentityStages;
    for path in &files {
        let name =
            path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let img = image::read_png(path)?;
        let hr = match train::crop_divisible(&img, scale) {
            Some(hr) => hr,
            None => {
                log::warn!(
                    "skipping {name}: {}x{} is below one x{scale} step",
                    img.width(),
                    img.height()
                );
                continue;
            }
        };
        let lr = resample::degrade(&hr, scale, false)?;
        let hr_luma = display_luma(&hr)?;
        let shave = scale as usize;
        for (run, exec) in [
            (&mut baseline, &mut identity as &mut dyn StageExecutor),
            (&mut evaluated, &mut *stages),
        ] {
            let sr = train::super_resolve(&lr, scale, exec)?;
            let sr_luma = display_luma(&sr)?;
            let p = psnr(&sr_luma, &hr_luma, shave)?;
            let s = ssim(&sr_luma, &hr_luma, shave)?;
            run.images.push((name.clone(), p, s));
        }
    }
    if baseline.images.is_empty() {
        return Err(Error::EmptyTrainingSet(format!(
            "every image in {} is below one x{scale} step",
            dir.display()
        )));
    }
    let runs = vec![baseline, evaluated];
    let csv = results_csv(&runs);
    let report = format_report(&runs);
    Ok(BenchmarkOutput { runs, csv, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Colorspace;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_image(w: usize, h: usize, seed: u64) -> PlanarImage {
        let mut rng = StdRng::seed_from_u64(seed);
        let samples = (0..w * h).map(|_| rng.random::<f32>()).collect();
        PlanarImage::new(w, h, 1, Colorspace::Srgb, samples).unwrap()
    }

    fn constant(w: usize, h: usize, v: f32) -> PlanarImage {
        PlanarImage::constant(w, h, 1, Colorspace::Srgb, v).unwrap()
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = rand_image(20, 14, 1);
        assert_eq!(psnr(&a, &a, 0).unwrap(), PSNR_CAP_DB);
        assert_eq!(psnr(&a, &a, 3).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn uniform_error_psnr_is_analytic() {
        let a = constant(16, 16, 0.3);
        let b = constant(16, 16, 0.4);
        // samples are stored as f32, so the 0.1 offset itself carries
        // quantization of ~5e-7 dB
        assert!((psnr(&a, &b, 0).unwrap() - 20.0).abs() < 1e-5);
        assert!((psnr(&a, &b, 2).unwrap() - 20.0).abs() < 1e-5);
        // deeper error, lower score
        let c = constant(16, 16, 0.5);
        assert!(psnr(&a, &c, 0).unwrap() < psnr(&a, &b, 0).unwrap());
    }

    #[test]
    fn psnr_matches_brute_force_oracle_and_is_symmetric() {
        for shave in [0usize, 3] {
            let a = rand_image(21, 17, 7);
            let b = rand_image(21, 17, 8);
            // independent route: explicit x/y loops over the shaved interior
            let mut acc = 0.0f64;
            let mut count = 0usize;
            for y in shave..17 - shave {
                for x in shave..21 - shave {
                    let d = a.at(0, x, y) as f64 - b.at(0, x, y) as f64;
                    acc += d * d;
                    count += 1;
                }
            }
            let expect = 10.0 * (count as f64 / acc).log10();
            let got = psnr(&a, &b, shave).unwrap();
            assert!((got - expect).abs() < 1e-9, "shave {shave}: {got} vs {expect}");
            assert_eq!(got, psnr(&b, &a, shave).unwrap());
        }
    }

    #[test]
    fn ssim_of_identical_images_is_exactly_one() {
        let a = rand_image(25, 19, 3);
        assert_eq!(ssim(&a, &a, 0).unwrap(), 1.0);
        assert_eq!(ssim(&a, &a, 2).unwrap(), 1.0);
    }

    /// Plain 2-D implementation: per-window double loops with the window
    /// normalized as a whole.
    fn ssim_naive(a: &PlanarImage, b: &PlanarImage) -> f64 {
        let (w, h) = (a.width(), a.height());
        let mut win2d = [[0.0f64; SSIM_WINDOW]; SSIM_WINDOW];
        let mut sum = 0.0;
        for (i, row) in win2d.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let dy = i as f64 - 5.0;
                let dx = j as f64 - 5.0;
                *v = (-(dx * dx + dy * dy) / (2.0 * 1.5 * 1.5)).exp();
                sum += *v;
            }
        }
        for row in &mut win2d {
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
        let mut total = 0.0;
        let mut windows = 0usize;
        for cy in 0..h - 10 {
            for cx in 0..w - 10 {
                let (mut ma, mut mb, mut maa, mut mbb, mut mab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in win2d.iter().enumerate() {
                    for (j, &wt) in row.iter().enumerate() {
                        let va = a.at(0, cx + j, cy + i) as f64;
                        let vb = b.at(0, cx + j, cy + i) as f64;
                        ma += wt * va;
                        mb += wt * vb;
                        maa += wt * va * va;
                        mbb += wt * vb * vb;
                        mab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (maa - ma * ma, mbb - mb * mb, mab - ma * mb);
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                windows += 1;
            }
        }
        total / windows as f64
    }

    #[test]
    fn ssim_matches_naive_2d_oracle() {
        let a = rand_image(24, 17, 11);
        let b = rand_image(24, 17, 12);
        let got = ssim(&a, &b, 0).unwrap();
        let expect = ssim_naive(&a, &b);
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        // symmetry
        assert!((got - ssim(&b, &a, 0).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn inverted_high_contrast_pattern_scores_low() {
        let mut a = constant(22, 22, 0.0);
        for y in 0..22 {
            for x in 0..22 {
                if (x / 2 + y / 2) % 2 == 0 {
                    a.plane_mut(0)[y * 22 + x] = 1.0;
                }
            }
        }
        let inverted = PlanarImage::new(
            22,
            22,
            1,
            Colorspace::Srgb,
            a.samples().iter().map(|v| 1.0 - v).collect(),
        )
        .unwrap();
        assert!(ssim(&a, &inverted, 0).unwrap() < 0.5);
    }

    #[test]
    fn constant_offset_ssim_matches_the_analytic_value() {
        let a = constant(20, 20, 0.5);
        let b = constant(20, 20, 0.55);
        let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
        // zero variance everywhere: both factors collapse
        let expect = ((2.0 * 0.5 * 0.55 + c1) * c2) / ((0.25 + 0.3025 + c1) * c2);
        assert!((ssim(&a, &b, 0).unwrap() - expect).abs() < 1e-6);
    }

    #[test]
    fn shave_ignores_exactly_the_border() {
        let a = rand_image(24, 20, 5);
        let mut b = a.clone();
        for y in 0..20 {
            for x in 0..24 {
                if x < 2 || y < 2 || x >= 22 || y >= 18 {
                    b.plane_mut(0)[y * 24 + x] = 0.0;
                }
            }
        }
        assert_eq!(psnr(&a, &b, 2).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&a, &b, 0).unwrap() < PSNR_CAP_DB);
        assert_eq!(ssim(&a, &b, 2).unwrap(), 1.0);
        assert!(ssim(&a, &b, 1).unwrap() < 1.0);
    }

    #[test]
    fn bad_pairs_are_rejected() {
        let a = rand_image(20, 20, 1);
        let b = rand_image(18, 20, 1);
        assert!(psnr(&a, &b, 0).is_err());
        let rgb = PlanarImage::constant(20, 20, 3, Colorspace::Srgb, 0.5).unwrap();
        assert!(psnr(&rgb, &rgb, 0).is_err());
        let lin = a.clone().with_space(Colorspace::Linear);
        assert!(psnr(&a, &lin, 0).is_err());
        assert!(psnr(&a, &a, 10).is_err()); // nothing left
        let tiny = rand_image(10, 10, 2);
        assert!(ssim(&tiny, &tiny, 0).is_err()); // smaller than the window
    }

    #[test]
    fn reference_table_spot_checks() {
        let ours = reference_entry("Set5", 2, "Ours").unwrap();
        assert_eq!((ours.psnr, ours.ssim), (39.55, 0.9665));
        let edsr = reference_entry("Set5", 2, "EDSR").unwrap();
        assert_eq!((edsr.psnr, edsr.ssim), (38.20, 0.9606));
        // the one method with gaps in the table
        assert!(reference_entry("Urban100", 2, "RED30").is_none());
        assert!(reference_entry("Urban100", 4, "RED30").is_none());
        assert_eq!(REFERENCE_RESULTS.len(), 7 * 8 - 2);
        for e in REFERENCE_RESULTS {
            assert!((0.0..=1.0).contains(&e.ssim) && e.psnr > 0.0);
        }
    }

    #[test]
    fn report_contains_reference_cells_verbatim() {
        let report = format_report(&[]);
        assert!(report.contains("39.55 / 0.9665"), "{report}");
        assert!(report.contains("38.20 / 0.9606"), "{report}");
        assert!(report.contains("- / -"), "{report}");
        assert!(report.contains("Urban100"));
    }

    #[test]
    fn run_aggregation_and_csv_are_deterministic() {
        let run = BenchmarkRun {
            dataset: "tiny".into(),
            scale: 2,
            method: "model".into(),
            images: vec![("a.png".into(), 30.0, 0.9), ("b.png".into(), 32.0, 0.95)],
        };
        assert!((run.mean_psnr() - 31.0).abs() < 1e-12);
        assert!((run.mean_ssim() - 0.925).abs() < 1e-12);
        let single = BenchmarkRun { images: vec![("a.png".into(), 30.0, 0.9)], ..run.clone() };
        assert_eq!(single.mean_psnr(), 30.0);
        assert_eq!(single.mean_ssim(), 0.9);
        let csv = results_csv(std::slice::from_ref(&run));
        assert_eq!(csv, results_csv(std::slice::from_ref(&run)));
        assert!(csv.starts_with("dataset,scale,method,image,psnr_db,ssim\n"));
        assert!(csv.contains("tiny,2,model,a.png,30.0000,0.900000"));
        let report = format_report(&[run]);
        assert!(report.contains("this run"));
        assert!(report.contains("31.00"));
    }

    use crate::image::{write_png, BitDepth};
    use crate::model::{Model, ModelConfig};
    use crate::train::{ModelStages, StageRole};
    use std::path::Path;

    fn write_dataset(dir: &Path, names: &[&str], seed: u64) {
        std::fs::create_dir_all(dir).unwrap();
        let mut rng = StdRng::seed_from_u64(seed);
        for name in names {
            let (w, h) = (36, 30);
            let samples = (0..w * h * 3).map(|_| rng.random::<f32>()).collect();
            let img = PlanarImage::new(w, h, 3, Colorspace::Srgb, samples).unwrap();
            write_png(&img, &dir.join(name), BitDepth::Eight).unwrap();
        }
    }

    fn zero_stage_set(roles: &[StageRole]) -> ModelStages {
        let cfg = ModelConfig::from_shapes(&[(4, 1)], true).unwrap();
        let mut stages = ModelStages::new();
        for &role in roles {
            stages.insert(role, Model::<f32>::build(cfg.clone()).unwrap(), 0.4);
        }
        stages
    }

    #[test]
    fn zero_weight_stages_reproduce_the_baseline_row() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("HR"), &["b.png", "a.png"], 40);
        let mut stages = zero_stage_set(&[StageRole::F2]);
        let out = run_benchmark(dir.path(), 2, &mut stages, "zeroed").unwrap();
        assert_eq!(out.runs[0].method, "gs");
        assert_eq!(out.runs[1].method, "zeroed");
        // filename order, independent of creation order
        let names: Vec<&str> = out.runs[0].images.iter().map(|r| r.0.as_str()).collect();
        assert_eq!(names, vec!["a", "b"]);
        for (base, ours) in out.runs[0].images.iter().zip(&out.runs[1].images) {
            assert!((base.1 - ours.1).abs() < 1e-6, "psnr {} vs {}", base.1, ours.1);
            assert!((base.2 - ours.2).abs() < 1e-9, "ssim {} vs {}", base.2, ours.2);
        }
        assert!(out.report.contains("38.20 / 0.9606"), "reference rows stay in the report");
    }

    #[test]
    fn benchmark_csv_is_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("HR"), &["x.png", "y.png"], 41);
        let mut stages = zero_stage_set(&[StageRole::F2]);
        let first = run_benchmark(dir.path(), 2, &mut stages, "m").unwrap();
        let second = run_benchmark(dir.path(), 2, &mut stages, "m").unwrap();
        assert_eq!(first.csv, second.csv);
        assert!(first.csv.starts_with("dataset,scale,method,image,psnr_db,ssim\n"));
    }

    #[test]
    fn benchmark_without_needed_stages_fails() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&dir.path().join("HR"), &["x.png"], 42);
        // x4 needs f2 and p4; provide only f2
        let mut stages = zero_stage_set(&[StageRole::F2]);
        let err = run_benchmark(dir.path(), 4, &mut stages, "m").unwrap_err();
        assert!(matches!(err, Error::MissingStage(_)), "{err}");
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("HR")).unwrap();
        let mut stages = zero_stage_set(&[StageRole::F2]);
        let err = run_benchmark(dir.path(), 2, &mut stages, "m").unwrap_err();
        assert!(matches!(err, Error::EmptyTrainingSet(_)), "{err}");
    }

    #[test]
    fn flat_directory_layout_is_accepted_too() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("tinyset");
        write_dataset(&root, &["only.png"], 43);
        let mut stages = zero_stage_set(&[StageRole::F2]);
        let out = run_benchmark(&root, 2, &mut stages, "m").unwrap();
        assert_eq!(out.runs[0].dataset, "tinyset");
        assert_eq!(out.runs[0].images.len(), 1);
    }
}
