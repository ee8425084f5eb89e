//! Boundary-equilibrium GAN: an autoencoder discriminator scored by its
//! reconstruction loss, a decoder-shaped generator, and the proportional
//! k controller balancing the two.

mod arch;
mod config;
mod latent;
mod train;

pub use arch::{
    build_decoder, build_discriminator, build_encoder, build_generator, decoder_layers,
    encoder_layers,
};
pub use config::BeganConfig;
pub use latent::LatentVector;
pub use train::{
    convergence_measure, reconstruction_loss, sample_faces, sample_latents, update_k, BeganLosses,
    BeganTrainState, StepStats,
};
