//! Parameter tuning for non-differentiable black-box image operators.
//!
//! A black box `f_bb(x; θ)` maps an image and a parameter vector to an
//! output image, exposing no gradients. This crate trains a differentiable
//! surrogate network to mimic the black box, then optimizes parameters
//! through the surrogate: either a single global θ (static or dynamic
//! alternating schemes) or a per-input θ predicted by a learner network.
//!
//! Module map:
//! - [`autodiff`]: reverse-mode AD over dense tensors.
//! - [`nn`]: the surrogate and parameter-learner networks, Adam, model I/O.
//! - [`blackbox`]: the parameter space, its relaxation/quantization, the
//!   built-in `SimBm3d` denoiser and the external subprocess adapter.
//! - [`metrics`]: PSNR / SSIM / MSE.
//! - [`data`]: synthetic clean/noisy pair generation and persistence.
//! - [`pipelines`]: the three optimization algorithms plus search baselines.
//! - [`cli`]: experiment configuration, reports, and the command entry points.

pub mod autodiff;
pub mod blackbox;
pub mod cli;
pub mod data;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod pipelines;
pub mod rng;
