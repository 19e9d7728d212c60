//! Recovering latent codes for target rasters, and the corruptions used to
//! stress that recovery.

pub mod corrupt;
pub mod decoder;
mod error;
pub mod invert;
pub mod reconstruct;

pub use corrupt::{corrupt, kept_rows, Corruption, CorruptionSpec, NoiseSpace};
pub use decoder::{GanDecoder, LatentDecoder, LinearDecoder};
pub use error::{InversionError, Result};
pub use invert::{invert, invert_batch, masked_l1, Constraint, Inversion, InversionConfig};
pub use reconstruct::{
    nearest_neighbor, nearest_neighbor_errors, reconstruct_batch, reconstruct_corrupted, Reconstruction,
};
