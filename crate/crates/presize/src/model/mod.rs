//! The size model: item serialization, encoders, classifier and inference.

mod config;
pub mod network;
mod params;
mod predictor;
mod serialize;

pub use config::ModelConfig;
pub use network::{cross_entropy, temporal_id, Batch, HistorySlots, TemporalReference};
pub use params::{count_parameters, Classifier, ModelParams};
pub use predictor::{make_batch, EncodedExample, ItemCorpus, SizeDistribution, SizeModel};
pub use serialize::{item_token_triplets, serialization_order, ItemTokens};
