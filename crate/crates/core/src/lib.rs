//! Leak-free arbitrary style transfer.
//!
//! An invertible flow maps images to latents without loss, AdaIN swaps
//! per-channel statistics in latent space, and a steganography stage hides
//! the content latent inside the stylized image so later re-stylization and
//! de-stylization start from the original content instead of the stylized
//! pixels.
//!
//! All numeric code is generic over [`Scalar`] (`f32` for training and
//! inference, `f64` for verification). The aliases at the crate root pin the
//! default precision.

pub mod error;
pub mod evaluation;
pub mod flow;
pub mod imageio;
pub mod nn;
pub mod params;
pub mod perceptual;
pub mod pipeline;
pub mod scalar;
pub mod stego;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};
pub use params::Parameters;
pub use scalar::Scalar;
pub use tensor::{ChannelStats, Tensor};
pub use transfer::TransferMode;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type FlowParams32 = flow::FlowParams<f32>;
pub type FlowParams64 = flow::FlowParams<f64>;
