//! Guided, spectrally normalized unpaired face translation at desk scale.
//!
//! The crate provides cycle-consistent generators with attention and AdaIN,
//! multi-scale spectrally normalized patch discriminators, identity /
//! perceptual / semantic / landmark / contrastive guidance losses, a full
//! training engine (TTUR, EMA, clipping, differentiable augmentation,
//! progressive resizing), VAE and paired-translation baselines, and the
//! standardized paired/unpaired evaluation protocols (FID, perceptual
//! distance, PSNR/SSIM, ID-Sim, NME, timing, stability indicators).
//!
//! Everything runs on a small built-in reverse-mode autodiff engine over
//! `ndarray`, so the whole pipeline works on synthetic two-domain data
//! without external ML runtimes. See `examples/` for runnable entry points
//! per capability and the `facecycle` binary for the CLI.

pub mod augment;
pub mod baselines;
pub mod ckpt;
pub mod config;
pub mod data;
pub mod error;
pub mod guidance;
pub mod imgproc;
pub mod linalg;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod optim;
pub mod rundir;
pub mod schedule;
pub mod train;
pub mod spectral;
pub mod tensor;
pub mod toy;
pub mod types;

pub use error::{Error, Result};
