//! Core algorithms of the `vsnerf` training laboratory.
//!
//! Everything in this crate is pure computation over `alloc` collections:
//! camera geometry, procedural multi-view scene synthesis, feature
//! interpolation and distillation, the view-consistency profile along rays,
//! importance sampling, a small radiance-field MLP with hand-written
//! backward passes, volume rendering, losses, and the training loop.
//!
//! File formats, the CLI, and anything that touches a filesystem or clock
//! live in the companion `vsnerf-cli` crate. The only seam is the
//! [`trainer::Clock`] trait, which the companion implements with real time.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod consistency;
pub mod dataset;
mod error;
pub mod features;
pub mod field;
pub mod geometry;
pub mod linalg;
pub mod metrics;
pub mod objectives;
pub mod rendering;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
