//! Mesh transformer for autoregressive forecasting of velocity and
//! pressure fields on dynamic triangle meshes.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod datagen;
pub mod delaunay;
pub mod downsample;
pub mod error;
pub mod eval;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod polygon;
pub mod tape;
pub mod training;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod testutil;
