//! Disentangled dense fusion of multimodal embeddings.
//!
//! The crate is organized bottom-up: [`numerics`] provides tensors and a
//! reverse-mode tape, on top of which sit the fusion network ([`fusion`]),
//! the vCLUB mutual-information estimator ([`club`]), losses
//! ([`objectives`]), the VAE embedding extractor ([`vae`]), data handling
//! ([`data`]), evaluation ([`metrics`]) and training ([`train`]).

pub mod club;
pub mod data;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod numerics;
pub mod objectives;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
