//! Random three-body Ising model on the Union Jack and triangular lattices.

pub mod analysis;
pub mod disorder;
pub mod error;
pub mod lattice;
pub mod mc;
pub mod observables;
pub mod oracle;
pub mod rng;
pub mod sweep;

pub use error::{Error, Result};
