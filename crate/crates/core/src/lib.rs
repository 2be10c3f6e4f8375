pub mod dataset;
pub mod error;
pub mod eval;
pub mod fe;
pub mod geometry;
pub mod gpr;
pub mod moo;
pub mod raster;
pub mod surrogate;

pub use error::{Error, Result};
