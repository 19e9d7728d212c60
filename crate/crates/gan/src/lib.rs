//! Decomposed LiDAR GAN.
//!
//! The generator emits a dense inverse-depth map together with
//! measurability logits. A straight-through Gumbel-Sigmoid sampler turns
//! the logits into a binary drop mask, and the compositor replaces dropped
//! pixels with the drop value before the discriminator sees the raster.

pub mod augment;
pub mod compose;
pub mod config;
mod ema;
mod error;
pub mod export;
pub mod losses;
pub mod networks;
pub mod sampler;
pub mod train;

pub use augment::{diff_augment, AugmentDraw};
pub use compose::{compose, compose_values, compose_var, rasters_to_tensor, tensor_to_rasters};
pub use config::{AugmentConfig, NetConfig, SamplerConfig, SamplerMode, TrainConfig, Variant};
pub use ema::ema_update;
pub use error::{GanError, Result};
pub use losses::{loss_d, loss_g, r1_penalty};
pub use networks::{Discriminator, Generator, GeneratorOutput};
pub use sampler::{mask_with_noise, sample_mask, sample_mask_multilevel, DropMask, GumbelNoise};
pub use train::{load_generator, sample_latents, train, RunDir, StepStats, Trainer, TrainSummary};
