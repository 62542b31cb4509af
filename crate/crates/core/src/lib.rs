//! Desk-scale laboratory for trajectory-anchored multi-view Gaussian splat
//! editing.
//!
//! * [`diffusion`] – noise schedules, DDIM/DDCM steps, analytic score models
//! * [`distillation`] – pseudo-ground-truth zoo and the SDS/reconstruction identity
//! * [`splat`] – differentiable isotropic Gaussian renderer and losses
//! * [`vcac`] – view-consistent attention control and the tiny denoiser hosting it
//! * [`tas`] – the trajectory-anchored editing loop
//! * [`verify`] – property suites shared by the CLI and the acceptance tests

pub mod config;
pub mod diffusion;
pub mod distillation;
pub mod error;
pub mod gradcheck;
pub mod imageio;
pub mod latent;
pub mod splat;
pub mod tas;
pub mod vcac;
pub mod verify;

pub use error::{Error, Result};
pub use latent::Latent;
