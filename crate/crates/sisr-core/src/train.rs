//! Patch training and the reuse-plus-patch cascade.
//!
//! Training pairs live entirely in sigmoidal grayscale: the target is the
//! ground-truth image, the input is the same image degraded and brought back
//! up with the anti-ringing upsampler, so both sides share one grid and the
//! network only has to fit the residual detail. Patches are drawn uniformly,
//! pushed through one of the six exact dihedral layouts (no interpolation),
//! and the training-set mean is subtracted so the residual body works around
//! zero; the mean travels with the checkpoint for inference.
//!
//! Scales above 2 reuse the 2x model instead of retraining from scratch:
//! each doubling is "upsample, then the 2x model", and a per-scale patch
//! model sits on top to absorb the drift the reused stages accumulate. The
//! composition for each scale is fixed by [`cascade_plan`]; patch stages
//! train against the frozen lower composition via [`prepare_patch_pairs`].

use std::collections::HashMap;
use std::fmt;
use std::ops::ControlFlow;
use std::path::Path;
use std::str::FromStr;

use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::image::{self, Colorspace, PlanarImage, SigmoidalParams};
use crate::metrics::PSNR_CAP_DB;
use crate::model::Model;
use crate::net::adam::{Adam, AdamConfig};
use crate::net::tensor::Tensor;
use crate::resample;
use crate::{Error, Result};

/// One of the six exact pixel permutations used for augmentation: the four
/// rotations plus the two diagonal flips. Axis-aligned mirrors are left out;
/// combined with the rotations they would duplicate layouts already covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AugmentOp {
    Id,
    Rot90,
    Rot180,
    Rot270,
    TransposeMain,
    TransposeAnti,
}

/// All ops in a fixed order, so samplers can index into them.
pub const AUGMENT_OPS: [AugmentOp; 6] = [
    AugmentOp::Id,
    AugmentOp::Rot90,
    AugmentOp::Rot180,
    AugmentOp::Rot270,
    AugmentOp::TransposeMain,
    AugmentOp::TransposeAnti,
];

impl AugmentOp {
    /// Whether the op swaps width and height.
    pub fn swaps_axes(self) -> bool {
        !matches!(self, AugmentOp::Id | AugmentOp::Rot180)
    }

    /// The op that undoes this one.
    pub fn inverse(self) -> AugmentOp {
        match self {
            AugmentOp::Rot90 => AugmentOp::Rot270,
            AugmentOp::Rot270 => AugmentOp::Rot90,
            other => other,
        }
    }

    /// Source pixel for output position `(x, y)`, where `(w, h)` are the
    /// *input* dimensions. Rotations are clockwise.
    fn source_of(self, x: usize, y: usize, w: usize, h: usize) -> (usize, usize) {
        match self {
            AugmentOp::Id => (x, y),
            AugmentOp::Rot90 => (y, h - 1 - x),
            AugmentOp::Rot180 => (w - 1 - x, h - 1 - y),
            AugmentOp::Rot270 => (w - 1 - y, x),
            AugmentOp::TransposeMain => (y, x),
            AugmentOp::TransposeAnti => (w - 1 - y, h - 1 - x),
        }
    }
}

/// Applies `op` to every plane. Pure index remapping: output samples are
/// bit-identical copies of input samples.
pub fn augment(img: &PlanarImage, op: AugmentOp) -> PlanarImage {
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = if op.swaps_axes() { (h, w) } else { (w, h) };
    let mut out = vec![0f32; img.samples().len()];
    for (c, plane) in out.chunks_mut(ow * oh).enumerate() {
        let src = img.plane(c);
        for y in 0..oh {
            for x in 0..ow {
                let (sx, sy) = op.source_of(x, y, w, h);
                plane[y * ow + x] = src[sy * w + sx];
            }
        }
    }
    PlanarImage::new(ow, oh, img.channels(), img.space(), out)
        .expect("augment preserves the sample count")
}

/// Reduces any input image to the single plane the networks consume:
/// linear-light Rec. 709 luma under the sigmoidal transfer.
pub fn sigmoidal_luma(img: &PlanarImage) -> Result<PlanarImage> {
    let params = SigmoidalParams::default();
    let lin = image::convert(img, Colorspace::Linear, params)?;
    let gray = if lin.channels() == 1 { lin } else { image::to_grayscale(&lin)? };
    image::linear_to_sigmoidal(&gray, params)
}

/// An aligned training pair in sigmoidal grayscale: `input` is what the
/// network sees (kernel-upsampled degradation, or a lower-cascade output for
/// patch stages), `target` the ground truth on the same grid.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub input: PlanarImage,
    pub target: PlanarImage,
}

/// Crops `img` to dimensions divisible by `scale`; `None` when a side is
/// smaller than one scale step.
pub(crate) fn crop_divisible(img: &PlanarImage, scale: u32) -> Option<PlanarImage> {
    let s = scale as usize;
    let (w, h) = (img.width() - img.width() % s, img.height() - img.height() % s);
    if w == 0 || h == 0 {
        return None;
    }
    Some(img.crop(0, 0, w, h).expect("divisible crop stays in bounds"))
}

/// Builds direct pairs for the base 2x model (or any single-hop scale):
/// target = sigmoidal luma cropped to a multiple of `scale`, input =
/// `upsample_gs(degrade(target))`. Images smaller than one scale step are
/// skipped with a warning.
pub fn prepare_pairs(hr_images: &[PlanarImage], scale: u32) -> Result<Vec<PreparedPair>> {
    let mut out = Vec::with_capacity(hr_images.len());
    for (i, img) in hr_images.iter().enumerate() {
        let target = match crop_divisible(&sigmoidal_luma(img)?, scale) {
            Some(t) => t,
            None => {
                log::warn!(
                    "skipping training image {i}: {}x{} is below one x{scale} step",
                    img.width(),
                    img.height()
                );
                continue;
            }
        };
        let lr = resample::degrade(&target, scale, false)?;
        let input = resample::upsample_gs(&lr, scale)?;
        out.push(PreparedPair { input, target });
    }
    Ok(out)
}

/// Pixel-weighted mean over the targets of `pairs` (the value stored in
/// checkpoints and subtracted from every patch).
pub fn target_mean(pairs: &[PreparedPair]) -> f64 {
    let (mut acc, mut count) = (0f64, 0u64);
    for p in pairs {
        acc += p.target.samples().iter().map(|&v| v as f64).sum::<f64>();
        count += p.target.samples().len() as u64;
    }
    if count == 0 { 0.0 } else { acc / count as f64 }
}

/// Everything [`train`] needs from a data source: mean-subtracted
/// `(input, target)` batches shaped `[n, 1, p, p]`, and the mean itself so
/// it can be written into checkpoints.
pub trait BatchSource {
    fn next_batch(&mut self, n: usize) -> Result<(Tensor<f32>, Tensor<f32>)>;
    fn mean(&self) -> f64;
}

fn patch_to_rows(img: &PlanarImage, mean: f64, dst: &mut [f32]) {
    for (d, &v) in dst.iter_mut().zip(img.samples()) {
        *d = (v as f64 - mean) as f32;
    }
}

/// Uniform random patch sampler: each sample draws an image, a position and
/// one of the six layouts from a seeded generator, so runs are reproducible.
#[derive(Debug)]
pub struct PairSampler {
    pairs: Vec<PreparedPair>,
    patch: usize,
    mean: f64,
    rng: StdRng,
}

impl PairSampler {
    /// Keeps only pairs at least `patch` on both sides (warning per skip)
    /// and errors if nothing remains. `mean` overrides the computed target
    /// mean, which patch stages use to stay consistent with the base model.
    pub fn new(
        pairs: Vec<PreparedPair>,
        patch: usize,
        mean: Option<f64>,
        seed: u64,
    ) -> Result<PairSampler> {
        if patch == 0 {
            return Err(Error::InvalidParameter("patch size must be positive".into()));
        }
        let mut usable = Vec::with_capacity(pairs.len());
        for (i, p) in pairs.into_iter().enumerate() {
            if p.target.width() < patch || p.target.height() < patch {
                log::warn!(
                    "skipping pair {i}: {}x{} is smaller than a {patch}x{patch} patch",
                    p.target.width(),
                    p.target.height()
                );
                continue;
            }
            usable.push(p);
        }
        if usable.is_empty() {
            return Err(Error::EmptyTrainingSet(format!(
                "no image can fit a {patch}x{patch} patch"
            )));
        }
        let mean = mean.unwrap_or_else(|| target_mean(&usable));
        Ok(PairSampler { pairs: usable, patch, mean, rng: StdRng::seed_from_u64(seed) })
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
}

impl BatchSource for PairSampler {
    fn next_batch(&mut self, n: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let p = self.patch;
        let mut x = Tensor::zeros(&[n, 1, p, p]);
        let mut t = Tensor::zeros(&[n, 1, p, p]);
        for i in 0..n {
            let pair = &self.pairs[self.rng.random_range(0..self.pairs.len())];
            let x0 = self.rng.random_range(0..=pair.target.width() - p);
            let y0 = self.rng.random_range(0..=pair.target.height() - p);
            let op = AUGMENT_OPS[self.rng.random_range(0..AUGMENT_OPS.len())];
            let xi = augment(&pair.input.crop(x0, y0, p, p)?, op);
            let ti = augment(&pair.target.crop(x0, y0, p, p)?, op);
            patch_to_rows(&xi, self.mean, &mut x.data_mut()[i * p * p..(i + 1) * p * p]);
            patch_to_rows(&ti, self.mean, &mut t.data_mut()[i * p * p..(i + 1) * p * p]);
        }
        Ok((x, t))
    }

    fn mean(&self) -> f64 {
        self.mean
    }
}

/// A frozen roster of patches for overfit experiments: one seeded position
/// per pair, every layout of it, served in a fixed cycle so each epoch sees
/// exactly the same samples.
#[derive(Debug)]
pub struct FixedPairs {
    inputs: Vec<PlanarImage>,
    targets: Vec<PlanarImage>,
    mean: f64,
    cursor: usize,
}

impl FixedPairs {
    pub fn new(pairs: &[PreparedPair], patch: usize, seed: u64) -> Result<FixedPairs> {
        let mut rng = StdRng::seed_from_u64(seed);
        let (mut inputs, mut targets) = (Vec::new(), Vec::new());
        for pair in pairs {
            if pair.target.width() < patch || pair.target.height() < patch {
                log::warn!(
                    "skipping a {}x{} pair: smaller than a {patch}x{patch} patch",
                    pair.target.width(),
                    pair.target.height()
                );
                continue;
            }
            let x0 = rng.random_range(0..=pair.target.width() - patch);
            let y0 = rng.random_range(0..=pair.target.height() - patch);
            let xi = pair.input.crop(x0, y0, patch, patch)?;
            let ti = pair.target.crop(x0, y0, patch, patch)?;
            for op in AUGMENT_OPS {
                inputs.push(augment(&xi, op));
                targets.push(augment(&ti, op));
            }
        }
        if inputs.is_empty() {
            return Err(Error::EmptyTrainingSet(format!(
                "no image can fit a {patch}x{patch} patch"
            )));
        }
        let mean = {
            let (mut acc, mut count) = (0f64, 0u64);
            for t in &targets {
                acc += t.samples().iter().map(|&v| v as f64).sum::<f64>();
                count += t.samples().len() as u64;
            }
            acc / count as f64
        };
        Ok(FixedPairs { inputs, targets, mean, cursor: 0 })
    }

    pub fn sample_count(&self) -> usize {
        self.inputs.len()
    }
}

impl BatchSource for FixedPairs {
    fn next_batch(&mut self, n: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let p = self.targets[0].width();
        let mut x = Tensor::zeros(&[n, 1, p, p]);
        let mut t = Tensor::zeros(&[n, 1, p, p]);
        for i in 0..n {
            let s = self.cursor;
            self.cursor = (self.cursor + 1) % self.inputs.len();
            patch_to_rows(&self.inputs[s], self.mean, &mut x.data_mut()[i * p * p..(i + 1) * p * p]);
            patch_to_rows(&self.targets[s], self.mean, &mut t.data_mut()[i * p * p..(i + 1) * p * p]);
        }
        Ok((x, t))
    }

    fn mean(&self) -> f64 {
        self.mean
    }
}

/// Knobs for one training run. Deserializes from TOML with every field
/// optional; the defaults are the recipe the full models were designed for
/// (159-pixel patches, batches of six, constant-rate ADAM).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch: usize,
    pub steps: u64,
    pub seed: u64,
    /// Subtract this instead of the computed training-set mean (used by
    /// patch stages to share the base model's offset).
    pub global_mean: Option<f64>,
    pub adam: AdamConfig,
    /// Evaluate batch PSNR every this many steps (0 = never; the first and
    /// last step are always included when enabled).
    pub psnr_every: u64,
    /// Write intermediate checkpoints every this many steps (0 = only the
    /// final one).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            patch_size: 159,
            batch: 6,
            steps: 1000,
            seed: 0,
            global_mean: None,
            adam: AdamConfig::default(),
            psnr_every: 25,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::InvalidParameter("patch_size must be positive".into()));
        }
        if self.batch == 0 {
            return Err(Error::InvalidParameter("batch must be positive".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be positive".into()));
        }
        self.adam.validate()
    }
}

/// Per-step trace record. `train_psnr` is the batch PSNR of the network
/// output against the target (both mean-subtracted, which PSNR ignores),
/// present on the steps selected by `psnr_every`.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub train_psnr: Option<f64>,
}

/// Renders a trace as CSV with columns `step,loss,train_psnr` (the PSNR
/// cell is empty on steps where it was not sampled).
pub fn trace_csv(trace: &[StepInfo]) -> String {
    let mut out = String::from("step,loss,train_psnr\n");
    for info in trace {
        let psnr = info.train_psnr.map(|v| format!("{v:.4}")).unwrap_or_default();
        out.push_str(&format!("{},{:.6e},{}\n", info.step, info.loss, psnr));
    }
    out
}

/// Peak-1 PSNR between two tensors, in dB, accumulated in f64.
fn tensor_psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP_DB)
}

fn batch_too_small(dims: &[usize], diameter: usize) -> bool {
    dims[2] < diameter || dims[3] < diameter
}

/// Runs the optimization loop: draw a batch, forward, backward, ADAM step.
///
/// Returns the per-step trace. Aborts with [`Error::Diverged`] the moment
/// the loss or gradient norm stops being finite. `on_step` sees every record
/// as it is produced and can stop the run early with `ControlFlow::Break`;
/// the final checkpoint (weights, optimizer state, mean, step count) is
/// still written to `checkpoint_to` on early stops.
///
/// Patches must cover the receptive field: the first batch's spatial dims
/// are checked against the model's receptive diameter.
pub fn train(
    model: &mut Model<f32>,
    adam: &mut Adam<f32>,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
    checkpoint_to: Option<&Path>,
    on_step: &mut dyn FnMut(&StepInfo) -> ControlFlow<()>,
) -> Result<Vec<StepInfo>> {
    cfg.validate()?;
    let diameter = 2 * model.config().receptive_radius() + 1;
    let mut trace: Vec<StepInfo> = Vec::with_capacity(cfg.steps.min(1 << 20) as usize);
    let mut last_step = 0;
    for step in 1..=cfg.steps {
        let (x, t) = source.next_batch(cfg.batch)?;
        if step == 1 && batch_too_small(t.dims(), diameter) {
            return Err(Error::InvalidParameter(format!(
                "{}x{} patches cannot cover the model's receptive diameter of {diameter}",
                t.dims()[3],
                t.dims()[2]
            )));
        }
        let want_psnr =
            cfg.psnr_every > 0 && (step % cfg.psnr_every == 0 || step == 1 || step == cfg.steps);
        let t_kept = want_psnr.then(|| t.clone());

        let (input, target) = (model.input_id(), model.target_id());
        let (output, loss_id) = (model.output_id(), model.loss_id());
        model.graph_mut().bind(input, x)?;
        model.graph_mut().bind(target, t)?;
        model.graph_mut().forward(&[loss_id])?;
        let loss = model.graph().value(loss_id)?.data()[0] as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss, grad_norm: f64::NAN });
        }
        model.graph_mut().backward(loss_id)?;
        let grad_norm = {
            let g = model.graph();
            g.param_ids()
                .iter()
                .filter_map(|&p| g.grad(p))
                .flat_map(|t| t.data().iter().map(|&v| (v as f64) * (v as f64)))
                .sum::<f64>()
                .sqrt()
        };
        if !grad_norm.is_finite() {
            return Err(Error::Diverged { step, loss, grad_norm });
        }
        adam.step(model.graph_mut())?;

        let train_psnr = t_kept.map(|t| tensor_psnr(model.graph().value(output).unwrap(), &t));
        let info = StepInfo { step, loss, grad_norm, train_psnr };
        let flow = on_step(&info);
        trace.push(info);
        last_step = step;
        if let Some(path) = checkpoint_to {
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps {
                checkpoint::save(path, model, source.mean(), step, Some(adam))?;
            }
        }
        if flow == ControlFlow::Break(()) {
            break;
        }
    }
    if let Some(path) = checkpoint_to {
        checkpoint::save(path, model, source.mean(), last_step, Some(adam))?;
    }
    Ok(trace)
}

/// Which slot a trained network fills in the cascade: the shared 2x model,
/// or the correction model for one final scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageRole {
    F2,
    P4,
    P8,
    P16,
}

impl StageRole {
    /// The output scale the role is tied to.
    pub fn scale(self) -> u32 {
        match self {
            StageRole::F2 => 2,
            StageRole::P4 => 4,
            StageRole::P8 => 8,
            StageRole::P16 => 16,
        }
    }

    pub const ALL: [StageRole; 4] = [StageRole::F2, StageRole::P4, StageRole::P8, StageRole::P16];
}

impl fmt::Display for StageRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StageRole::F2 => "f2",
            StageRole::P4 => "p4",
            StageRole::P8 => "p8",
            StageRole::P16 => "p16",
        };
        f.write_str(s)
    }
}

impl FromStr for StageRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<StageRole> {
        match s {
            "f2" => Ok(StageRole::F2),
            "p4" => Ok(StageRole::P4),
            "p8" => Ok(StageRole::P8),
            "p16" => Ok(StageRole::P16),
            other => Err(Error::InvalidParameter(format!(
                "unknown stage role {other:?} (expected f2, p4, p8 or p16)"
            ))),
        }
    }
}

/// Stage sequence that produces a given scale. Every `F2` entry implies a
/// 2x upsample before the model runs; patch entries run at the resolution
/// they find. Only 2, 4 and 8 are supported — one doubling for 2x, and for
/// the higher scales the deepest composition that was actually trained
/// (the 8x chain ends in the 4x patch model; no dedicated 8x patch model
/// exists).
pub fn cascade_plan(scale: u32) -> Result<Vec<StageRole>> {
    use StageRole::*;
    match scale {
        2 => Ok(vec![F2]),
        4 => Ok(vec![F2, F2, P4]),
        8 => Ok(vec![F2, F2, P4, F2, P4]),
        other => Err(Error::UnsupportedScale(other)),
    }
}

/// The frozen composition a patch stage trains against: everything below
/// it in the cascade. `F2` trains directly on upsampled degradations, so
/// its plan is empty.
pub fn patch_training_plan(role: StageRole) -> Vec<StageRole> {
    use StageRole::*;
    match role {
        F2 => vec![],
        P4 => vec![F2, F2],
        P8 => vec![F2, F2, P4, F2, P4],
        P16 => vec![F2, F2, P4, F2, P4, P8, F2, P4, P8],
    }
}

/// Runs stage models on single-plane sigmoidal images. The executor owns
/// whatever state the stages need (checkpoints, means, nothing at all);
/// [`run_cascade`] owns the upsampling between them.
pub trait StageExecutor {
    fn apply(&mut self, role: StageRole, y: &PlanarImage) -> Result<PlanarImage>;

    /// Whether `apply` can serve this role (used to fail fast before any
    /// resampling work happens).
    fn has(&self, _role: StageRole) -> bool {
        true
    }
}

/// Pass-through stages: the cascade degenerates to iterated kernel
/// upsampling, which is both the baseline and the behavior of zero-weight
/// models.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityStages;

impl StageExecutor for IdentityStages {
    fn apply(&mut self, _role: StageRole, y: &PlanarImage) -> Result<PlanarImage> {
        Ok(y.clone())
    }
}

struct Stage {
    model: Model<f32>,
    mean: f64,
}

/// Checkpoint-backed stages. Each application subtracts the stage's stored
/// training mean, runs the network tiled (so memory stays bounded on large
/// images), and adds the mean back.
pub struct ModelStages {
    stages: HashMap<StageRole, Stage>,
    tile: usize,
}

impl ModelStages {
    pub const DEFAULT_TILE: usize = 64;

    pub fn new() -> ModelStages {
        ModelStages::with_tile(ModelStages::DEFAULT_TILE)
    }

    pub fn with_tile(tile: usize) -> ModelStages {
        ModelStages { stages: HashMap::new(), tile }
    }

    pub fn insert(&mut self, role: StageRole, model: Model<f32>, mean: f64) {
        self.stages.insert(role, Stage { model, mean });
    }

    /// Loads a checkpoint into `role`, adopting its stored mean.
    pub fn load(&mut self, role: StageRole, path: &Path) -> Result<()> {
        let loaded = checkpoint::load(path)?;
        self.insert(role, loaded.model, loaded.meta.mean);
        Ok(())
    }

    pub fn roles(&self) -> Vec<StageRole> {
        let mut v: Vec<StageRole> = self.stages.keys().copied().collect();
        v.sort();
        v
    }
}

impl Default for ModelStages {
    fn default() -> ModelStages {
        ModelStages::new()
    }
}

impl StageExecutor for ModelStages {
    fn apply(&mut self, role: StageRole, y: &PlanarImage) -> Result<PlanarImage> {
        let tile = self.tile;
        let stage = self
            .stages
            .get_mut(&role)
            .ok_or_else(|| Error::MissingStage(role.to_string()))?;
        if y.channels() != 1 {
            return Err(Error::ChannelMismatch { expected: 1, found: y.channels() });
        }
        let (w, h) = (y.width(), y.height());
        let mut x = Tensor::zeros(&[1, 1, h, w]);
        patch_to_rows(y, stage.mean, x.data_mut());
        let out = stage.model.forward_tiled(&x, tile)?;
        let samples = out.data().iter().map(|&v| (v as f64 + stage.mean) as f32).collect();
        PlanarImage::new(w, h, 1, y.space(), samples)
    }

    fn has(&self, role: StageRole) -> bool {
        self.stages.contains_key(&role)
    }
}

/// Drives a plan over a single-plane image: upsample by 2 before each `F2`,
/// then let the executor apply the stage.
pub fn run_cascade(
    y: &PlanarImage,
    plan: &[StageRole],
    stages: &mut dyn StageExecutor,
) -> Result<PlanarImage> {
    let mut cur = y.clone();
    for &role in plan {
        if role == StageRole::F2 {
            cur = resample::upsample_gs(&cur, 2)?;
        }
        cur = stages.apply(role, &cur)?;
    }
    Ok(cur)
}

/// Iterates the plan's upsamples without any models — the reference the
/// luma delta is taken against, and the baseline output.
fn gs_chain(img: &PlanarImage, plan: &[StageRole]) -> Result<PlanarImage> {
    let mut cur = img.clone();
    for &role in plan {
        if role == StageRole::F2 {
            cur = resample::upsample_gs(&cur, 2)?;
        }
    }
    Ok(cur)
}

/// Full single-image pipeline: display-referred input to display-referred
/// output at `scale`.
///
/// The networks see only sigmoidal luma. Color inputs are upscaled whole by
/// the kernel chain in sigmoidal space, and the network's contribution
/// rides on top as a luma delta added to every channel, so with identity
/// (or zero-weight) stages the result is exactly the kernel upscale.
/// Grayscale inputs stay single-channel end to end.
pub fn super_resolve(
    lr: &PlanarImage,
    scale: u32,
    stages: &mut dyn StageExecutor,
) -> Result<PlanarImage> {
    let plan = cascade_plan(scale)?;
    for &role in &plan {
        if !stages.has(role) {
            return Err(Error::MissingStage(role.to_string()));
        }
    }
    let params = SigmoidalParams::default();
    let y_sig = sigmoidal_luma(lr)?;
    let y_sr = run_cascade(&y_sig, &plan, stages)?;
    if lr.channels() == 1 {
        let lin = image::sigmoidal_to_linear(&y_sr, params)?;
        return image::linear_to_srgb(&lin).map(clamp_unit);
    }
    let rgb_sig = image::convert(lr, Colorspace::Sigmoidal, params)?;
    let rgb_up = gs_chain(&rgb_sig, &plan)?;
    let y_gs = gs_chain(&y_sig, &plan)?;
    let mut out = rgb_up;
    for c in 0..out.channels() {
        let plane = out.plane_mut(c);
        for ((v, &sr), &gs) in plane.iter_mut().zip(y_sr.samples()).zip(y_gs.samples()) {
            *v += sr - gs;
        }
    }
    let lin = image::sigmoidal_to_linear(&out, params)?;
    image::linear_to_srgb(&lin).map(clamp_unit)
}

fn clamp_unit(mut img: PlanarImage) -> PlanarImage {
    for v in img.samples_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    img
}

/// Builds pairs for a patch stage: the target is sigmoidal luma cropped to
/// the stage's scale, the input is the frozen lower composition run on the
/// degradation — exactly what the stage will sit on top of at inference.
pub fn prepare_patch_pairs(
    hr_images: &[PlanarImage],
    role: StageRole,
    lower: &mut dyn StageExecutor,
) -> Result<Vec<PreparedPair>> {
    let plan = patch_training_plan(role);
    if plan.is_empty() {
        return Err(Error::InvalidParameter(
            "the 2x model trains on direct pairs, not on a lower composition".into(),
        ));
    }
    let scale = role.scale();
    let mut out = Vec::with_capacity(hr_images.len());
    for (i, img) in hr_images.iter().enumerate() {
        let target = match crop_divisible(&sigmoidal_luma(img)?, scale) {
            Some(t) => t,
            None => {
                log::warn!(
                    "skipping training image {i}: {}x{} is below one x{scale} step",
                    img.width(),
                    img.height()
                );
                continue;
            }
        };
        let lr = resample::degrade(&target, scale, false)?;
        let input = run_cascade(&lr, &plan, lower)?;
        out.push(PreparedPair { input, target });
    }
    Ok(out)
}

/// Trains one patch stage against its frozen lower composition. Thin
/// wrapper: [`prepare_patch_pairs`] + [`PairSampler`] + [`train`].
#[allow(clippy::too_many_arguments)]
pub fn train_patch_stage(
    model: &mut Model<f32>,
    adam: &mut Adam<f32>,
    role: StageRole,
    lower: &mut dyn StageExecutor,
    hr_images: &[PlanarImage],
    cfg: &TrainConfig,
    checkpoint_to: Option<&Path>,
    on_step: &mut dyn FnMut(&StepInfo) -> ControlFlow<()>,
) -> Result<Vec<StepInfo>> {
    let pairs = prepare_patch_pairs(hr_images, role, lower)?;
    let mut sampler = PairSampler::new(pairs, cfg.patch_size, cfg.global_mean, cfg.seed)?;
    train(model, adam, &mut sampler, cfg, checkpoint_to, on_step)
}
