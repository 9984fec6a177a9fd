//! Permanental point processes on a grid: Cox sampling through squared
//! Gaussian fields, α-permanent weights, Papangelou intensities, Glauber and
//! Kawasaki dynamics and their diffusive scaling.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alpha_permanent;
pub mod dynamics;
pub mod error;
pub mod gaussian_field;
pub mod harness;
pub mod kernel;
pub mod papangelou;
pub mod rng;
pub mod sampler;
pub mod scaling;
pub mod state_space;
pub mod stats;

pub use error::{Error, Result};
pub use state_space::{build_grid, Configuration, GridSpec};
