//! Demosaicing of event-camera (HybridEVS) RAW frames with missing pixels.
//!
//! The crate is `no_std` (with `alloc`) and purely computational:
//!
//! * [`tensor`]: dense `f64` tensors with tape-based reverse-mode autodiff
//!   and a finite-difference checker.
//! * [`mosaic`]: the HybridEVS color filter array, RAW simulation, the
//!   `.hevs` byte codec, space-to-depth and a classical baseline.
//! * [`swin`]: the Swin-Transformer U-Net reconstructor.
//! * [`losses`]: Charbonnier and Pixel-Focus losses plus difference
//!   histograms.
//! * [`train`]: cosine schedule, random crops, Adam and the two-stage loop.
//! * [`metrics`]: PSNR, SSIM and difference maps.
//! * [`synth`]: procedural ground-truth scenes.
//! * [`gradcheck`]: the finite-difference verification suite.
//!
//! File IO, configuration and the CLI live in the `evdemosaic` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod mosaic;
pub mod rng;
pub mod swin;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{NdTensor, Tape, Var};

#[cfg(test)]
pub(crate) mod testutil {
    use crate::NdTensor;

    /// Uniform values in [-1, 1).
    pub fn rand_tensor(shape: &[usize], seed: u64) -> NdTensor {
        crate::rng::uniform_tensor(shape, seed, -1.0, 1.0)
    }
}
