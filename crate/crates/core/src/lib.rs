//! Separable physics-informed Kolmogorov-Arnold networks.

// Index loops mirror the math in the kernels; `!(x > 0.0)` style checks are
// there to reject NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod bspline;
pub mod config;
pub mod error;
pub mod experiment;
pub mod full_model;
pub mod kanet;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod physics;
pub mod reference;
pub mod sep_model;
pub mod tensorgrid;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
