//! Single-image super-resolution in a sigmoidal working colorspace.
//!
//! The pipeline has three parts:
//!
//! * [`image`] and [`resample`] take care of colorspace handling and of a
//!   ringing-suppressed spline upsampler (`upsample_gs`) that provides the
//!   interpolation backbone,
//! * [`net`] is a small static-graph reverse-mode autodiff engine (conv2d,
//!   relu, add, concat, log-cosh loss) that [`model`] uses to assemble a
//!   densely connected residual network operating on the luma plane,
//! * [`train`] and [`metrics`] drive patch-based ADAM training, the
//!   scale-factor cascade, and PSNR/SSIM benchmarking.
//!
//! Heavy loops run data-parallel under rayon when the default `parallel`
//! feature is on, and degrade to plain sequential loops without it. In both
//! modes every output element is produced by exactly one task with a fixed
//! accumulation order, so results are bit-identical across thread counts.

pub mod checkpoint;
mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod net;
pub mod parallel;
pub mod resample;
pub mod synth;
pub mod train;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
