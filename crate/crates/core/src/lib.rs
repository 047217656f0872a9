//! Simulation and analysis of long-distance Bell tests.

// `!(x > 0.0)` guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod coincidence;
pub mod error;
pub mod linalg;
pub mod photonsim;
pub mod quantum;
pub mod randomness;
pub mod spacetime;
pub mod tomography;

pub use error::{Error, Result};
