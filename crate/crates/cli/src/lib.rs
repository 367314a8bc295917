//! Pipeline stages and the inference service behind the `filmedgan` binary.

pub mod bundle;
pub mod config;
pub mod grid;
pub mod service;
pub mod stages;

pub use bundle::{Bundle, EditOutput};
pub use config::PipelineConfig;
