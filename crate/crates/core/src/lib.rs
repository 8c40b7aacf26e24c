//! Long video inference for video latent diffusion models without retraining.
//!
//! A model trained on `N_train` frames is asked for `M > N_train` frames. The
//! crate provides the pieces that make this work:
//!
//! - [`noise_schedule`]: rescheduled initial noise, built from `N_train` base
//!   frames by shuffling them inside small units so that every stride-aligned
//!   window of `N_train` frames sees the complete set of base noises.
//! - [`sampler`]: DDIM sampling with classifier-free guidance, windowed
//!   temporal attention with center-distance fusion, and the Direct / Sliding /
//!   GenL baselines.
//! - [`motion_injection`]: per-frame prompt interpolation gated by denoising
//!   timestep band and cross-attention layer index.
//! - [`model`]: a small seeded, untrained video U-Net with the usual
//!   conv / temporal conv / spatial transformer / temporal transformer stack.
//! - [`metrics`]: toy consistency and Fréchet metrics plus benchmarking.
//! - [`cli`]: the `freenoise` command line and file formats.

pub mod cli;
pub mod error;
pub mod metrics;
pub mod model;
pub mod motion_injection;
pub mod noise_schedule;
pub mod numerics;
pub mod sampler;

pub use error::{Error, Result};
pub use numerics::{Array, Rng};
