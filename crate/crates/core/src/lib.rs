//! Engine for mobile-oriented video VAE decoders.
//!
//! The crate provides the building blocks of a lightweight 3D decoder —
//! dense 5-D tensors, standard and depthwise-separable 3D convolutions with
//! hand-written backward passes, the decoupled pixel-shuffle upsampling
//! family, a configurable decoder graph, a binary weight container (TVWD),
//! PSNR/SSIM metrics, a toy-scale feature-alignment distillation trainer and
//! a per-block latency profiler.
//!
//! All numeric code is generic over the scalar type via [`Scalar`]
//! (`f32` for production arithmetic, `f64` for gradient verification).

pub mod bench;
pub mod decoder;
pub mod distill;
pub mod error;
pub mod metrics;
pub mod ops;
pub mod scalar;
pub mod tensor;
pub mod upsample;
pub mod verify;
pub mod weights;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Shape5, Tensor5};

/// Production-precision tensor.
pub type Tensor5f = Tensor5<f32>;
/// Verification-precision tensor (finite-difference oracles).
pub type Tensor5d = Tensor5<f64>;

/// Production-precision weight store.
pub type WeightStoreF = weights::WeightStore<f32>;
/// Verification-precision weight store.
pub type WeightStoreD = weights::WeightStore<f64>;
