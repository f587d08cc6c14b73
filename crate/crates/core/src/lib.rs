//! Gaussian random fields that satisfy linear boundary constraints exactly.

pub mod apps;
pub mod cgrf;
pub mod config;
pub mod error;
pub mod expr;
pub mod geometry;
pub mod gp;
pub mod io;
pub mod kernels;

pub use error::{Error, Result};
