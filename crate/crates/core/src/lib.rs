//! Neural light field engine built on the two-plane ray parameterization.
//!
//! Rays are expressed as light-slab coordinates `(x, y, u, v)`, encoded with
//! six factored multi-resolution 2D feature grids, and decoded into an image
//! by a point-wise convolutional network with super-resolution stages.
//! Non-frontal scenes are split into several slabs, each its own model.

// Range checks are written `!(x > 0.0)` so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod partition;
pub mod real;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
