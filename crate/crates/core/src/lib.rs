pub mod cli;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod meshing;
pub mod primitives;
pub mod search;
pub mod tensor;
pub mod topology;
pub mod verification;

pub use error::{Error, Result};
