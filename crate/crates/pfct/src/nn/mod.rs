//! A small conditional U-Net with hand-written backpropagation.
//!
//! Everything is generic over [`Scalar`] (`f32` for training, `f64` for the
//! finite-difference gradient checks in the test suite). Convolutions go
//! through im2col + GEMM; gradients are derived layer by layer and verified
//! against central finite differences.

mod ops;
mod unet;

pub use ops::{
    avgpool2, avgpool2_backward, concat_channels, im2col, silu, silu_backward, sinusoidal_embedding,
    split_channels_grad, upsample2, upsample2_backward, Conv2d, Linear,
};
pub use unet::{CondUNet, NetworkConfig, UNetCache};

/// Element type of the network: `f32` or `f64`.
///
/// The conversion methods carry names that do not collide with the
/// `num_traits` prelude.
pub trait Scalar: ndarray::NdFloat + Send + Sync {
    fn of_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}
