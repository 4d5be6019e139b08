//! Spectral image regularization on the torus.
//!
//! The library implements fractional-Laplacian denoising with closed-form
//! per-mode solutions, bilevel learning of the parameters (s, α) via a
//! box-constrained Newton/SQP iteration, a fractional cartoon–texture
//! decomposition model with its explicit solution pair, ROF and OSV
//! baselines driven by gradient flows, and PSNR/SSIM evaluation.

pub mod baselines;
pub mod bilevel;
pub mod decompose;
pub mod denoise;
pub mod error;
pub mod metrics;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
