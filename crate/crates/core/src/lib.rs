//! Attribute-conditioned peptide generation: corpus handling, a small autodiff engine,
//! recurrent autoencoders, latent-space samplers and screening utilities.

pub mod analysis;
pub mod autoencoder;
pub mod corpus;
pub mod langmodel;
pub mod latent;
pub mod sampler;
pub mod screening;
pub mod stats;
pub mod tensor;
