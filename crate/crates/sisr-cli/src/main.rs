//! `sisr` — command-line frontend for the super-resolution pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 precondition violation (bad
//! arguments, malformed inputs), 3 runtime failure (I/O, corrupt files,
//! diverged training).

// Doc comments below double as clap help text, where `[model]` and `<dir>`
// are argument syntax rather than rustdoc markup.
#![allow(rustdoc::broken_intra_doc_links, rustdoc::invalid_html_tags)]

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use sisr_core::image::{self, BitDepth, Colorspace, PlanarImage, SigmoidalParams};
use sisr_core::metrics;
use sisr_core::model::{Model, ModelConfig};
use sisr_core::net::gradcheck;
use sisr_core::net::Adam;
use sisr_core::train::{self, ModelStages, StageRole, TrainConfig};
use sisr_core::{checkpoint, parallel, resample, Error, Result};

#[derive(Parser)]
#[command(
    name = "sisr",
    version,
    about = "Single-image super-resolution: sigmoidal-space resampling plus a residual CNN cascade",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for data-parallel loops (0 = all cores). With 1,
    /// every result is bit-exactly reproducible.
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Re-encode an image between sRGB, linear-light and sigmoidal spaces
    Convert(ConvertArgs),
    /// Resample an image to a target size with a chosen kernel
    Resize(ResizeArgs),
    /// Downscale by an integer factor with the Catmull-Rom kernel
    Degrade(DegradeArgs),
    /// Upscale by an integer factor with the anti-ringing spline kernel
    Upsample(UpsampleArgs),
    /// Train the base 2x model on a directory of HR images
    Train(TrainArgs),
    /// Train a patch-correction stage on top of frozen lower stages
    TrainPatch(TrainPatchArgs),
    /// Super-resolve one image with trained stage checkpoints
    Sr(SrArgs),
    /// Evaluate stages over a dataset and print a comparison report
    Bench(BenchArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Print the config, mean and parameter count of a checkpoint
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SpaceArg {
    Srgb,
    Linear,
    Sigmoidal,
}

impl From<SpaceArg> for Colorspace {
    fn from(s: SpaceArg) -> Colorspace {
        match s {
            SpaceArg::Srgb => Colorspace::Srgb,
            SpaceArg::Linear => Colorspace::Linear,
            SpaceArg::Sigmoidal => Colorspace::Sigmoidal,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Catrom,
    Spline36,
    Gaussian,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PresetArg {
    /// All five residual units
    Full,
    /// First three residual units (overfit-scale experiments)
    Lite,
}

impl PresetArg {
    fn config(self) -> ModelConfig {
        match self {
            PresetArg::Full => ModelConfig::full(),
            PresetArg::Lite => ModelConfig::lite(),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PatchStageArg {
    P4,
    P8,
}

impl From<PatchStageArg> for StageRole {
    fn from(s: PatchStageArg) -> StageRole {
        match s {
            PatchStageArg::P4 => StageRole::P4,
            PatchStageArg::P8 => StageRole::P8,
        }
    }
}

#[derive(Args)]
struct ConvertArgs {
    /// Input PNG
    #[arg(long = "in", value_name = "PNG")]
    input: PathBuf,
    /// Output PNG
    #[arg(long = "out", value_name = "PNG")]
    output: PathBuf,
    /// Target space
    #[arg(long, value_enum)]
    to: SpaceArg,
    /// Space the input samples are assumed to be in
    #[arg(long, value_enum, default_value_t = SpaceArg::Srgb)]
    assume: SpaceArg,
    /// Sigmoidal midpoint
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Sigmoidal contrast
    #[arg(long, default_value_t = 8.5)]
    beta: f64,
    /// Write 16-bit samples (keeps precision of non-display encodings)
    #[arg(long)]
    deep: bool,
}

#[derive(Args)]
struct ResizeArgs {
    #[arg(long = "in", value_name = "PNG")]
    input: PathBuf,
    #[arg(long = "out", value_name = "PNG")]
    output: PathBuf,
    /// Resampling kernel
    #[arg(long, value_enum, default_value_t = KernelArg::Spline36)]
    kernel: KernelArg,
    /// Target width in pixels
    #[arg(long)]
    width: usize,
    /// Target height in pixels
    #[arg(long)]
    height: usize,
    /// Gaussian sigma in filter-space units (gaussian kernel only)
    #[arg(long, default_value_t = resample::DEFAULT_GAUSSIAN_SIGMA)]
    sigma: f64,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long = "in", value_name = "PNG")]
    input: PathBuf,
    #[arg(long = "out", value_name = "PNG")]
    output: PathBuf,
    /// Downscale factor
    #[arg(long)]
    scale: u32,
    /// Crop to a multiple of the scale instead of failing
    #[arg(long)]
    crop: bool,
}

#[derive(Args)]
struct UpsampleArgs {
    #[arg(long = "in", value_name = "PNG")]
    input: PathBuf,
    #[arg(long = "out", value_name = "PNG")]
    output: PathBuf,
    /// Upscale factor
    #[arg(long)]
    scale: u32,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config with optional [train] and [model] tables; missing fields
    /// use the built-in defaults
    #[arg(long, value_name = "TOML")]
    config: Option<PathBuf>,
    /// Directory of HR PNG training images
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    /// Checkpoint to write
    #[arg(long = "out", value_name = "CKPT")]
    output: PathBuf,
    /// Model preset used when the config has no [model] table
    #[arg(long, value_enum, default_value_t = PresetArg::Full)]
    preset: PresetArg,
    /// Override the config's RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's step count
    #[arg(long)]
    steps: Option<u64>,
    /// Write the per-step loss trace as CSV
    #[arg(long, value_name = "CSV")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct TrainPatchArgs {
    /// Which patch stage to train
    #[arg(long, value_enum)]
    stage: PatchStageArg,
    /// Frozen lower-stage checkpoints, as role=path (e.g. f2=base.ckpt);
    /// repeat per stage
    #[arg(long = "lower", value_name = "ROLE=CKPT", required = true)]
    lower: Vec<String>,
    #[arg(long, value_name = "TOML")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    data: PathBuf,
    #[arg(long = "out", value_name = "CKPT")]
    output: PathBuf,
    #[arg(long, value_enum, default_value_t = PresetArg::Full)]
    preset: PresetArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, value_name = "CSV")]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SrArgs {
    /// Output scale
    #[arg(long)]
    scale: u32,
    /// Stage checkpoints as role=path; repeat per stage the scale needs
    #[arg(long = "stages", value_name = "ROLE=CKPT", required = true)]
    stages: Vec<String>,
    #[arg(long = "in", value_name = "PNG")]
    input: PathBuf,
    #[arg(long = "out", value_name = "PNG")]
    output: PathBuf,
    /// Interior tile size for tiled inference (memory/speed trade-off)
    #[arg(long, default_value_t = ModelStages::DEFAULT_TILE)]
    tile: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset directory (PNGs in <dir>/HR/ or directly in <dir>)
    #[arg(long, value_name = "DIR")]
    dataset: PathBuf,
    #[arg(long)]
    scale: u32,
    /// Stage checkpoints as role=path; repeat per stage the scale needs
    #[arg(long = "stages", value_name = "ROLE=CKPT", required = true)]
    stages: Vec<String>,
    /// Method label in the CSV and report
    #[arg(long, default_value = "ours")]
    method: String,
    /// Write per-image results as CSV
    #[arg(long, value_name = "CSV")]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = ModelStages::DEFAULT_TILE)]
    tile: usize,
}

#[derive(Args)]
struct GradcheckArgs {
    /// RNG seed for probe graphs and sampled elements
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Number of random multi-op compositions to check
    #[arg(long, default_value_t = 50)]
    compositions: usize,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint to describe
    #[arg(value_name = "CKPT")]
    checkpoint: PathBuf,
}

/// On-disk config: both tables optional, every field defaulted.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RunConfig {
    train: TrainConfig,
    model: Option<ModelConfig>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // help/version are successful outcomes; anything else is usage
            let code = ExitCode::from(u8::from(err.use_stderr()));
            let _ = err.print();
            return code;
        }
    };
    parallel::configure_global_threads(cli.threads);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if err.is_precondition() { 2 } else { 3 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Convert(a) => convert(a),
        Command::Resize(a) => resize(a),
        Command::Degrade(a) => degrade(a),
        Command::Upsample(a) => upsample(a),
        Command::Train(a) => train_cmd(a),
        Command::TrainPatch(a) => train_patch_cmd(a),
        Command::Sr(a) => sr(a),
        Command::Bench(a) => bench(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn depth_of(deep: bool) -> BitDepth {
    if deep {
        BitDepth::Sixteen
    } else {
        BitDepth::Eight
    }
}

fn convert(a: ConvertArgs) -> Result<()> {
    let params = SigmoidalParams::new(a.alpha, a.beta)?;
    let img = image::read_png(&a.input)?.with_space(a.assume.into());
    let out = image::convert(&img, a.to.into(), params)?;
    image::write_png(&out, &a.output, depth_of(a.deep))
}

fn resize(a: ResizeArgs) -> Result<()> {
    let spec = match a.kernel {
        KernelArg::Catrom => resample::KernelSpec::catmull_rom(),
        KernelArg::Spline36 => resample::KernelSpec::spline36(),
        KernelArg::Gaussian => resample::KernelSpec::gaussian(a.sigma)?,
    };
    let img = image::read_png(&a.input)?;
    let out = resample::resize(&img, a.width, a.height, &spec)?;
    image::write_png(&out, &a.output, BitDepth::Eight)
}

fn degrade(a: DegradeArgs) -> Result<()> {
    if ![2, 4, 8].contains(&a.scale) {
        return Err(Error::UnsupportedScale(a.scale));
    }
    let img = image::read_png(&a.input)?;
    let out = resample::degrade(&img, a.scale, a.crop)?;
    image::write_png(&out, &a.output, BitDepth::Eight)
}

fn upsample(a: UpsampleArgs) -> Result<()> {
    let img = image::read_png(&a.input)?;
    let out = resample::upsample_gs(&img, a.scale)?;
    image::write_png(&out, &a.output, BitDepth::Eight)
}

/// Reads every PNG directly inside `dir`, sorted by filename.
fn read_image_dir(dir: &Path) -> Result<Vec<PlanarImage>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::InvalidParameter(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyTrainingSet(format!("no PNG images in {}", dir.display())));
    }
    files.iter().map(|p| image::read_png(p)).collect()
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::BadConfig(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::BadConfig(format!("{}: {e}", path.display())))
}

fn apply_overrides(cfg: &mut TrainConfig, seed: Option<u64>, steps: Option<u64>) {
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(steps) = steps {
        cfg.steps = steps;
    }
}

/// Progress printer + trace collection shared by both training commands.
fn run_training(
    model: &mut Model<f32>,
    source: &mut dyn train::BatchSource,
    cfg: &TrainConfig,
    out: &Path,
    trace_to: Option<&Path>,
) -> Result<()> {
    let mut adam = Adam::new(cfg.adam)?;
    let trace = train::train(model, &mut adam, source, cfg, Some(out), &mut |info| {
        if let Some(psnr) = info.train_psnr {
            println!(
                "step {:>6}  loss {:.6e}  train psnr {:.2} dB",
                info.step, info.loss, psnr
            );
        }
        ControlFlow::Continue(())
    })?;
    if let Some(path) = trace_to {
        std::fs::write(path, train::trace_csv(&trace)).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    }
    let last = trace.last().expect("at least one step ran");
    println!(
        "finished after {} steps: loss {:.6e}, checkpoint {}",
        last.step,
        last.loss,
        out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut run_cfg = load_run_config(a.config.as_deref())?;
    apply_overrides(&mut run_cfg.train, a.seed, a.steps);
    let model_cfg = run_cfg.model.unwrap_or_else(|| a.preset.config());
    model_cfg.validate()?;
    run_cfg.train.validate()?;

    let images = read_image_dir(&a.data)?;
    let pairs = train::prepare_pairs(&images, 2)?;
    let mut sampler = train::PairSampler::new(
        pairs,
        run_cfg.train.patch_size,
        run_cfg.train.global_mean,
        run_cfg.train.seed,
    )?;
    println!(
        "training the 2x model: {} usable images, {} params, {} steps",
        sampler.pair_count(),
        model_cfg.param_count(),
        run_cfg.train.steps
    );
    let mut model: Model<f32> = Model::build(model_cfg)?;
    model.init_random(run_cfg.train.seed);
    run_training(&mut model, &mut sampler, &run_cfg.train, &a.output, a.trace.as_deref())
}

/// Parses repeated `role=path` assignments into a loaded stage set.
fn load_stages(assignments: &[String], tile: usize) -> Result<ModelStages> {
    let mut stages = ModelStages::with_tile(tile);
    for spec in assignments {
        let (role, path) = spec.split_once('=').ok_or_else(|| {
            Error::InvalidParameter(format!(
                "stage spec {spec:?} is not of the form role=path (e.g. f2=base.ckpt)"
            ))
        })?;
        stages.load(StageRole::from_str(role)?, Path::new(path))?;
    }
    Ok(stages)
}

fn require_plan_stages(stages: &ModelStages, plan: &[StageRole]) -> Result<()> {
    use sisr_core::train::StageExecutor;
    for &role in plan {
        if !stages.has(role) {
            return Err(Error::MissingStage(role.to_string()));
        }
    }
    Ok(())
}

fn train_patch_cmd(a: TrainPatchArgs) -> Result<()> {
    let role: StageRole = a.stage.into();
    let mut run_cfg = load_run_config(a.config.as_deref())?;
    apply_overrides(&mut run_cfg.train, a.seed, a.steps);
    let model_cfg = run_cfg.model.unwrap_or_else(|| a.preset.config());
    model_cfg.validate()?;
    run_cfg.train.validate()?;

    let mut lower = load_stages(&a.lower, ModelStages::DEFAULT_TILE)?;
    require_plan_stages(&lower, &train::patch_training_plan(role))?;
    let images = read_image_dir(&a.data)?;
    let pairs = train::prepare_patch_pairs(&images, role, &mut lower)?;
    let mut sampler = train::PairSampler::new(
        pairs,
        run_cfg.train.patch_size,
        run_cfg.train.global_mean,
        run_cfg.train.seed,
    )?;
    println!(
        "training patch stage {role}: {} usable images, {} params, {} steps",
        sampler.pair_count(),
        model_cfg.param_count(),
        run_cfg.train.steps
    );
    let mut model: Model<f32> = Model::build(model_cfg)?;
    model.init_random(run_cfg.train.seed);
    run_training(&mut model, &mut sampler, &run_cfg.train, &a.output, a.trace.as_deref())
}

fn sr(a: SrArgs) -> Result<()> {
    let mut stages = load_stages(&a.stages, a.tile)?;
    let img = image::read_png(&a.input)?;
    let out = train::super_resolve(&img, a.scale, &mut stages)?;
    image::write_png(&out, &a.output, BitDepth::Eight)?;
    println!(
        "{}x{} -> {}x{} written to {}",
        img.width(),
        img.height(),
        out.width(),
        out.height(),
        a.output.display()
    );
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut stages = load_stages(&a.stages, a.tile)?;
    let out = metrics::run_benchmark(&a.dataset, a.scale, &mut stages, &a.method)?;
    if let Some(path) = &a.csv {
        std::fs::write(path, &out.csv).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    }
    print!("{}", out.report);
    Ok(())
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    let report = gradcheck::run_suite(a.seed, a.compositions);
    println!(
        "{} gradient elements checked, {} skipped at relu kinks, max relative error {:.3e}",
        report.checks, report.skipped, report.max_rel_err
    );
    if report.ok() {
        println!("all finite-difference checks passed");
        Ok(())
    } else {
        Err(Error::GradcheckFailed(format!(
            "{} element(s) disagree with finite differences:\n{}",
            report.failures.len(),
            report.failures.join("\n")
        )))
    }
}

fn inspect(a: InspectArgs) -> Result<()> {
    let meta = checkpoint::peek(&a.checkpoint)?;
    println!("checkpoint: {}", a.checkpoint.display());
    println!("  steps trained: {}", meta.steps);
    println!("  luma mean: {:.8}", meta.mean);
    match &meta.optimizer {
        Some(opt) => println!(
            "  optimizer: adam (lr {:.2e}, beta1 {}, beta2 {}, {} steps)",
            opt.adam.lr, opt.adam.beta1, opt.adam.beta2, opt.steps
        ),
        None => println!("  optimizer: none"),
    }
    let cfg = &meta.model;
    println!("  units: {} ({})", cfg.units.len(), if cfg.dense { "dense" } else { "plain" });
    for u in &cfg.units {
        println!("    unit {}: {} filters x {} layers", u.order, u.filters, u.layers);
    }
    println!("  receptive radius: {} px", cfg.receptive_radius());
    println!("  parameters: {} in {} tensors", cfg.param_count(), cfg.layer_specs().len());
    Ok(())
}
