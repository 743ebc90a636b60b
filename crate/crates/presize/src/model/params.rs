use presize_nn::params::join;
use presize_nn::{Embedding, Linear, Parameters, Scalar, Tensor, TransformerStack};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::Result;

/// Output head: `2d -> d -> d/2 -> n_classes` with GELU between layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier<T> {
    pub hidden1: Linear<T>,
    pub hidden2: Linear<T>,
    pub output: Linear<T>,
}

impl<T: Scalar> Parameters<T> for Classifier<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.hidden1.visit(&join(prefix, "hidden1"), f);
        self.hidden2.visit(&join(prefix, "hidden2"), f);
        self.output.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.hidden1.visit_mut(&join(prefix, "hidden1"), f);
        self.hidden2.visit_mut(&join(prefix, "hidden2"), f);
        self.output.visit_mut(&join(prefix, "output"), f);
    }
}

/// Every learnable tensor of the size model. The context encoder shares
/// `item_encoder` and the item embedding tables.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub token_embedding: Embedding<T>,
    pub position_embedding: Embedding<T>,
    pub attribute_embedding: Embedding<T>,
    pub temporal_embedding: Embedding<T>,
    pub item_cls: Tensor<T>,
    pub history_cls: Tensor<T>,
    pub item_encoder: TransformerStack<T>,
    pub history_encoder: TransformerStack<T>,
    pub classifier: Classifier<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Deterministic initialization from `seed`. With temporal embeddings
    /// disabled the temporal table starts (and stays) at zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.dim;
        let std = presize_nn::layers::INIT_STD;
        let token_embedding = Embedding::init(cfg.vocab_size, d, &mut rng);
        let position_embedding = Embedding::init(cfg.n_positions, d, &mut rng);
        let attribute_embedding = Embedding::init(cfg.n_attr_names(), d, &mut rng);
        let mut temporal_embedding = Embedding::init(cfg.n_temporal_ids, d, &mut rng);
        if !cfg.use_temporal {
            temporal_embedding.table.fill(T::zero());
        }
        let item_cls = Tensor::randn(&[d], std, &mut rng);
        let history_cls = Tensor::randn(&[d], std, &mut rng);
        let item_encoder = TransformerStack::init(cfg.n_layers, d, cfg.heads, cfg.ffn_dim, &mut rng)?;
        let history_encoder = TransformerStack::init(cfg.n_layers, d, cfg.heads, cfg.ffn_dim, &mut rng)?;
        let classifier = Classifier {
            hidden1: Linear::init(2 * d, d, &mut rng),
            hidden2: Linear::init(d, d / 2, &mut rng),
            output: Linear::init(d / 2, cfg.n_classes, &mut rng),
        };
        Ok(Self {
            token_embedding,
            position_embedding,
            attribute_embedding,
            temporal_embedding,
            item_cls,
            history_cls,
            item_encoder,
            history_encoder,
            classifier,
        })
    }
}

impl<T: Scalar> Parameters<T> for ModelParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.token_embedding.visit(&join(prefix, "token_embedding"), f);
        self.position_embedding.visit(&join(prefix, "position_embedding"), f);
        self.attribute_embedding.visit(&join(prefix, "attribute_embedding"), f);
        self.temporal_embedding.visit(&join(prefix, "temporal_embedding"), f);
        self.item_cls.visit(&join(prefix, "item_cls"), f);
        self.history_cls.visit(&join(prefix, "history_cls"), f);
        self.item_encoder.visit(&join(prefix, "item_encoder"), f);
        self.history_encoder.visit(&join(prefix, "history_encoder"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.token_embedding.visit_mut(&join(prefix, "token_embedding"), f);
        self.position_embedding.visit_mut(&join(prefix, "position_embedding"), f);
        self.attribute_embedding.visit_mut(&join(prefix, "attribute_embedding"), f);
        self.temporal_embedding.visit_mut(&join(prefix, "temporal_embedding"), f);
        self.item_cls.visit_mut(&join(prefix, "item_cls"), f);
        self.history_cls.visit_mut(&join(prefix, "history_cls"), f);
        self.item_encoder.visit_mut(&join(prefix, "item_encoder"), f);
        self.history_encoder.visit_mut(&join(prefix, "history_encoder"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

/// Closed-form parameter count for a configuration.
pub fn count_parameters(cfg: &ModelConfig) -> usize {
    let d = cfg.dim;
    let f = cfg.ffn_dim;
    let n = cfg.n_classes;
    let embeddings = (cfg.vocab_size + cfg.n_positions + cfg.n_attr_names() + cfg.n_temporal_ids + 2) * d;
    let attention = d * 3 * d + 3 * d + d * d + d;
    let norms = 4 * d;
    let ffn = d * f + f + f * d + d;
    let encoders = 2 * cfg.n_layers * (attention + norms + ffn);
    let head = (2 * d * d + d) + (d * (d / 2) + d / 2) + ((d / 2) * n + n);
    embeddings + encoders + head
}
