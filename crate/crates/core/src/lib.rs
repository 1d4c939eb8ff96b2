//! Fourier-space supervision and adversarial losses for single-image
//! super-resolution, with hand-written backpropagation.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: images, PPM/FTEN I/O, bicubic resampling and aligned crops.
//! - [`spectral`]: Hann-windowed unitary 2D DFT, amplitude/phase and the
//!   adjoint used for gradients.
//! - [`losses`]: L1, Fourier amplitude/phase and feature losses.
//! - [`nets`]: layers, the toy generator and the spatial/Fourier discriminators.
//! - [`gan`]: relativistic-average GAN objectives.
//! - [`trainer`]: the weighted composite objective, Adam and the training loop.
//! - [`metrics`]: PSNR and SSIM.
//! - [`gradcheck`]: finite-difference verification of every analytic gradient.

pub mod error;
pub mod gan;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod nets;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Image, ScaleFactor};
