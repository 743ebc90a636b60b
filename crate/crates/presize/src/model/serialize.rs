use crate::data::{Item, CATEGORY, TITLE};
use crate::error::{Error, Result};
use crate::tokenizer::{BpeVocab, PAD_ID};

use super::ModelConfig;

/// An item serialized to `(token, position, attribute)` triplets, padded to
/// the configured item length. Valid slots always form a prefix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ItemTokens {
    pub token_ids: Vec<u32>,
    /// Zero-based position within the attribute value (position 1 is id 0).
    pub pos_ids: Vec<u32>,
    pub attr_ids: Vec<u32>,
    pub valid: Vec<bool>,
}

impl ItemTokens {
    pub fn n_valid(&self) -> usize {
        self.valid.iter().take_while(|&&v| v).count()
    }
}

/// `(attribute name, value)` pairs in serialization order: title, category,
/// size attributes, then the rest, the last two groups sorted by name.
pub fn serialization_order<'a>(item: &'a Item, cfg: &ModelConfig) -> Result<Vec<(&'a str, String)>> {
    let registry = &cfg.attributes;
    let mut sizes = Vec::new();
    let mut rest = Vec::new();
    for (name, value) in &item.attributes {
        if name == TITLE {
            continue;
        }
        if registry.id(name).is_none() || name == CATEGORY {
            return Err(Error::UnknownAttribute(name.clone()));
        }
        if registry.is_size_attribute(name) {
            sizes.push((name.as_str(), value.clone()));
        } else {
            rest.push((name.as_str(), value.clone()));
        }
    }
    let mut out = Vec::with_capacity(2 + sizes.len() + rest.len());
    out.push((TITLE, item.title().to_string()));
    out.push((CATEGORY, item.category_string()));
    out.extend(sizes);
    out.extend(rest);
    Ok(out)
}

/// Serializes an item into triplets.
///
/// Positions restart at 1 for every attribute value. Removed attributes are
/// always skipped; maskable attributes are skipped when `mask_context`.
/// Whitespace separators inside values are not emitted. The concatenation
/// is cut at the tail to `item_seq_len` and padded with `[PAD]`.
pub fn item_token_triplets(
    item: &Item,
    tokenizer: &BpeVocab,
    cfg: &ModelConfig,
    mask_context: bool,
) -> Result<ItemTokens> {
    let len = cfg.item_seq_len;
    let mut t = ItemTokens {
        token_ids: Vec::with_capacity(len),
        pos_ids: Vec::with_capacity(len),
        attr_ids: Vec::with_capacity(len),
        valid: Vec::with_capacity(len),
    };
    'outer: for (name, value) in serialization_order(item, cfg)? {
        if cfg.removed_attributes.iter().any(|a| a == name)
            || (mask_context && cfg.maskable_attributes.iter().any(|a| a == name))
        {
            continue;
        }
        let attr = cfg.attributes.id(name).ok_or_else(|| Error::UnknownAttribute(name.to_string()))? as u32;
        let ids = tokenizer.encode(&BpeVocab::normalize(&value), None);
        let mut pos = 0u32;
        for id in ids {
            if id < 256 && (id as u8).is_ascii_whitespace() {
                continue;
            }
            if t.token_ids.len() == len {
                break 'outer;
            }
            t.token_ids.push(id);
            t.pos_ids.push(pos.min(cfg.n_positions as u32 - 1));
            t.attr_ids.push(attr);
            t.valid.push(true);
            pos += 1;
        }
    }
    while t.token_ids.len() < len {
        t.token_ids.push(PAD_ID);
        t.pos_ids.push(0);
        t.attr_ids.push(0);
        t.valid.push(false);
    }
    Ok(t)
}
