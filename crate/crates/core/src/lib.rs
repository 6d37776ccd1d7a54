pub mod checkpoint;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod eval;
pub mod fixtures;
pub mod generator;
pub mod nn;
mod pngio;
pub mod psf;
pub mod stroke;
pub mod trainer;

pub use error::{Error, Result};
