use serde::{Deserialize, Serialize};

use crate::data::{AttributeRegistry, TITLE};
use crate::error::{Error, Result};

/// Architecture and featurization settings of a size model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding and hidden dimension.
    pub dim: usize,
    /// Layers in each of the item and history encoders.
    pub n_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Tokens per item, not counting `[CLS]`.
    pub item_seq_len: usize,
    pub history_len: usize,
    pub n_classes: usize,
    pub vocab_size: usize,
    pub n_positions: usize,
    pub n_temporal_ids: usize,
    pub attributes: AttributeRegistry,
    /// Attributes hidden from the target item's context embedding.
    pub maskable_attributes: Vec<String>,
    /// Attributes dropped from every item before serialization.
    pub removed_attributes: Vec<String>,
    /// When false the temporal table is zero and never updated.
    pub use_temporal: bool,
}

impl ModelConfig {
    /// Defaults: `d = 512`, 4 layers, 8 heads, feed-forward `4 d`, 45 tokens
    /// per item, 25 history items, 17 temporal ids. Title and every size
    /// attribute are maskable.
    pub fn new(n_classes: usize, vocab_size: usize, attributes: AttributeRegistry) -> Self {
        let mut maskable = vec![TITLE.to_string()];
        maskable.extend(attributes.size_attributes().iter().cloned());
        Self {
            dim: 512,
            n_layers: 4,
            heads: 8,
            ffn_dim: 4 * 512,
            item_seq_len: 45,
            history_len: 25,
            n_classes,
            vocab_size,
            n_positions: 45,
            n_temporal_ids: 17,
            attributes,
            maskable_attributes: maskable,
            removed_attributes: Vec::new(),
            use_temporal: true,
        }
    }

    /// Sets `dim` and keeps the feed-forward width at `4 * dim`.
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = dim;
        self.ffn_dim = 4 * dim;
        self
    }

    pub fn n_attr_names(&self) -> usize {
        self.attributes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("dim {} must be a positive multiple of heads {}", self.dim, self.heads));
        }
        if self.dim < 2 {
            return fail("dim must be at least 2".into());
        }
        for (name, v) in [
            ("ffn_dim", self.ffn_dim),
            ("item_seq_len", self.item_seq_len),
            ("history_len", self.history_len),
            ("n_classes", self.n_classes),
            ("n_positions", self.n_positions),
            ("n_temporal_ids", self.n_temporal_ids),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.vocab_size < crate::tokenizer::N_BASE {
            return fail(format!("vocab_size {} is below the byte alphabet", self.vocab_size));
        }
        for a in self.maskable_attributes.iter().chain(&self.removed_attributes) {
            if self.attributes.id(a).is_none() {
                return Err(Error::UnknownAttribute(a.clone()));
            }
        }
        Ok(())
    }
}
