//! Spatial-spectral transformer for hyperspectral image denoising.
//!
//! * [`tensor`]: tensors, reverse-mode differentiation, Adam, Xavier init, gradient checking
//! * [`hsi`]: hyperspectral cubes, file I/O, cropping, patch extraction, pseudo-color
//! * [`noise`]: Gaussian, deadline, impulse, stripe and mixed degradations
//! * [`net`]: windowed spatial attention, spectral attention, the full network, FLOP/param counts
//! * [`metrics`]: PSNR, SSIM, SAM and report tables

pub mod hsi;
pub mod metrics;
pub mod net;
pub mod noise;
pub mod rng;
pub mod tensor;

pub use rng::SeedStream;
