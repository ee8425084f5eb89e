//! Face synthesis with generated landmark annotations.
//!
//! A BEGAN generator is trained on face images, latent codes for annotated
//! images are recovered by inverting the generator, and a small fully
//! connected network learns to map latent codes to landmark coordinates.
//! Feeding the same latent vector to both networks yields new images with
//! matching annotations.

pub mod began;
pub mod diffcore;
pub mod error;
pub mod inversion;
pub mod lgen;
pub mod optim;
pub mod pipeline;

pub use error::{Error, Result};
