pub mod cli;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod heads;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rules;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
