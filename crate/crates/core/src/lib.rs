//! Text-conditioned video-to-mask flow matching, desk scale.
//!
//! The crate trains a small latent flow model that deforms a video's latent
//! representation into the latent of the mask picked out by a referring
//! query, on a procedurally generated moving-shapes benchmark. Everything is
//! CPU-only, seeded, and bit-reproducible.
//!
//! Module map:
//! - [`tensor`]: dense tensors, reverse-mode autodiff, AdamW, grad checks
//! - [`movingshapes`]: the MovingShapes-Ref benchmark generator
//! - [`codec`]: stochastic conv autoencoder between pixels and latents
//! - [`net`]: the conditional spatio-temporal velocity network
//! - [`flow`]: flow-matching training, ablation paradigms, ODE inference
//! - [`metrics`]: J / F / J&F evaluation with DAVIS conventions
//! - [`io`], [`config`]: FRVS tensor container, PGM masks, flat-text config

pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod movingshapes;
pub mod rng;
pub mod tensor;

pub mod codec;
pub mod flow;
pub mod net;

pub use error::{FlowError, IoError, NumericsError};
pub use tensor::{Tensor, Real};
