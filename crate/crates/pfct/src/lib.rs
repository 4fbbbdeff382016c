//! # pfct
//!
//! Training a Poisson flow consistency model in isolation and applying it to
//! conditional image denoising with single-step inference.
//!
//! The perturbation kernel of the augmented Poisson flow family factors into a
//! uniform angle on the data sphere and a heavy-tailed radius. Holding the
//! angle fixed while drawing two radii at adjacent noise levels produces the
//! pair of perturbed images that the consistency loss compares, so no
//! pretrained flow model is needed.
//!
//! ## Structure
//!
//! - [`kernel`] — perturbation-kernel sampling: uniform angles, Beta-ratio radii,
//!   shared-angle adjacent pairs
//! - [`schedules`] — discretization-count schedules over training steps and the
//!   power-interpolated sigma grid
//! - [`noise_select`] — per-sample noise-index selection (batch-normalized Beta,
//!   lognormal, uniform)
//! - [`nn`] — a small conditional U-Net with hand-written backpropagation,
//!   generic over `f32`/`f64`
//! - [`model`] — the consistency function wrapper enforcing the boundary
//!   condition, plus single-step denoising
//! - [`loss`] — weighted pseudo-Huber consistency loss with a gradient-stopped
//!   teacher branch
//! - [`optim`] — rectified Adam and global-norm gradient clipping
//! - [`data`] — synthetic phantom pairs, HU normalization, crops, paired-dataset
//!   ingestion
//! - [`training`] — the end-to-end training loop, run logs, checkpoints
//! - [`metrics`] — SSIM / PSNR reference implementations and split evaluation
//! - [`config`] — strict run-configuration files
//! - [`plot`] — minimal PNG curve rendering for schedule and run plots
//!
//! ## Quick start
//!
//! ```
//! use pfct::kernel::AugmentedKernelSpec;
//! use pfct::rng::stream;
//!
//! let spec = AugmentedKernelSpec::new(64, 2048, 0.5).unwrap();
//! let mut rng = stream(7, "kernel");
//! let radii = pfct::kernel::sample_radius(&spec, 4, &mut rng).unwrap();
//! assert_eq!(radii.len(), 4);
//! assert!(radii.iter().all(|r| *r >= 0.0));
//! ```

pub mod config;
pub mod data;
pub mod error;
pub mod kernel;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod noise_select;
pub mod optim;
pub mod plot;
pub mod rng;
pub mod schedules;
pub mod training;

pub use error::{PfctError, Result};
