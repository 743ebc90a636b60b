pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod synthgen;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
