//! Core library for text-conditioned 3D human motion generation.
//!
//! The crate implements a two-stage diffusion system: a static pose prior
//! trained on single frames, extended with temporal layers and fine-tuned on
//! motion clips. Everything is deterministic given a seed and runs on CPU in
//! `f64`.

pub mod checkpoint;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod motion;
pub mod network;
pub mod rng;
pub mod rotation;
pub mod schedule;
pub mod skeleton;
pub mod tape;
pub mod text;
pub mod training;

pub use error::{Error, Result};
