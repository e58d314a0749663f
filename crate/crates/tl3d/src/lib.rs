//! Tri-latent 3D generation at desk scale.
//!
//! Two-stage pipeline over a compact 3-plane latent space:
//!
//! 1. A KL-regularized VAE encodes posed images (with Plücker ray channels)
//!    into a tri-latent, decodes it with a 3D-aware transformer into a
//!    tri-plane neural field, and trains through differentiable volume
//!    rendering with reconstruction, geometry-smoothness, KL, and
//!    two-discriminator adversarial losses.
//! 2. A latent diffusion model (score-based v-prediction with geometric
//!    mixing, or rectified-flow matching) learns the latent distribution,
//!    optionally conditioned on text/image stub embeddings with
//!    classifier-free guidance.
//!
//! Everything runs on the in-crate reverse-mode autodiff substrate
//! ([`tensor`]) in double precision; datasets are procedurally generated
//! ([`datagen`]) so the full loop is reproducible without external data.
//!
//! See the crate `examples/` directory for one runnable program per major
//! capability, and the `tl3d` binary for the operational CLI
//! (`gen-data | train-vae | train-diffusion | sample | eval`).

pub mod conditioning;
pub mod datagen;
pub mod diffusion;
pub mod error;
pub mod field;
pub mod geometry;
pub mod harness;
pub mod imageio;
pub mod math3d;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
