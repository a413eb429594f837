//! Mesh-bound Gaussian head avatars with UV-space base and residual
//! appearance fields, trained through a differentiable CPU splatting
//! renderer.

// Index loops mirror the math; `!(x > y)` comparisons deliberately treat NaN as failure.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod config;
pub mod error;
pub mod fields;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod obj;
pub mod pipeline;
pub mod quat;
pub mod raster;
pub mod scene;
pub mod training;
pub mod uvfield;

pub use error::{Error, Result};
