//! duaw-core: a desk-scale toolkit that trains a universal adversarial
//! watermark against a small convolutional VAE and measures how the
//! watermark disrupts downstream generator fine-tuning.
//!
//! Module map:
//! - [`tensor`], [`tape`], [`metrics`], [`adam`]: the differentiable
//!   numerical substrate (forward ops, reverse-mode gradients, SSIM /
//!   MS-SSIM / MSE losses, Adam updates).
//! - [`vae`]: small convolutional VAE with Gaussian posterior, trained
//!   from scratch and frozen afterwards.
//! - [`surrogate`]: deterministic procedural content x style dataset
//!   generator (the data-free training set).
//! - [`watermark`]: the universal watermark training loop under an
//!   L-infinity budget.
//! - [`generator`]: toy conditional latent denoiser with full and
//!   low-rank fine-tuning, standing in for generator customization.
//! - [`classifier`], [`transforms`], [`experiments`]: evaluation harness
//!   (protection success rate, robustness transforms, ablations).
//! - [`container`], [`imgio`]: persistence formats.

pub mod adam;
pub mod classifier;
pub mod container;
pub mod error;
pub mod experiments;
pub mod generator;
pub mod imgio;
pub mod metrics;
pub mod paramset;
pub mod rng;
pub mod surrogate;
pub mod tape;
pub mod tensor;
pub mod transforms;
pub mod vae;
pub mod watermark;

pub use error::{DuawError, Result};
pub use tensor::Tensor;
