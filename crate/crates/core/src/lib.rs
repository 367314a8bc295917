//! Language-guided outfit image editing with feature-wise linear modulation.

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod error;
pub mod exec;
pub mod film;
pub mod imageio;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod text;

pub use error::{Error, Result};
