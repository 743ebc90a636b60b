use std::collections::HashMap;
use std::path::Path;

use presize_nn::{named_tensors, softmax, Tensor};
use serde::{Deserialize, Serialize};

use super::network::{self, Batch, HistorySlots, TemporalReference};
use super::{item_token_triplets, temporal_id, ItemTokens, ModelConfig, ModelParams};
use crate::checkpoint;
use crate::data::{Item, Purchase, SizeVocabulary, TrainingExample};
use crate::error::{Error, Result};
use crate::tokenizer::BpeVocab;

const MODEL_MAGIC: &[u8; 8] = b"PRSZMODL";

/// Probability over size classes for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeDistribution {
    pub probs: Vec<f64>,
}

impl SizeDistribution {
    /// Most likely class; ties go to the lower id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// The `k` most likely classes, best first, ties by lower id.
    pub fn top_k(&self, k: usize) -> Vec<(usize, f64)> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| (i, self.probs[i])).collect()
    }
}

/// Interned item sequences. Items that serialize identically share an
/// entry, so a batch encodes each distinct sequence once.
#[derive(Clone, Debug, Default)]
pub struct ItemCorpus {
    tokens: Vec<ItemTokens>,
    index: HashMap<(Item, bool), usize>,
    by_tokens: HashMap<ItemTokens, usize>,
}

/// A training example expressed as corpus indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub history_items: Vec<usize>,
    pub history_days: Vec<u32>,
    pub context: usize,
    pub target_day: u32,
    pub label: usize,
}

impl ItemCorpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, i: usize) -> &ItemTokens {
        &self.tokens[i]
    }

    pub fn intern(&mut self, item: &Item, masked: bool, tokenizer: &BpeVocab, cfg: &ModelConfig) -> Result<usize> {
        // Keyed on content: records may reuse an id with a different size.
        let key = (item.clone(), masked);
        if let Some(&i) = self.index.get(&key) {
            return Ok(i);
        }
        let t = item_token_triplets(item, tokenizer, cfg, masked)?;
        let i = match self.by_tokens.get(&t) {
            Some(&i) => i,
            None => {
                self.tokens.push(t.clone());
                self.by_tokens.insert(t, self.tokens.len() - 1);
                self.tokens.len() - 1
            }
        };
        self.index.insert(key, i);
        Ok(i)
    }

    /// Interns the example's items. History is cut to the most recent
    /// `history_len` purchases.
    pub fn encode_example(
        &mut self,
        history: &[Purchase],
        target: &Item,
        target_day: u32,
        label: usize,
        tokenizer: &BpeVocab,
        cfg: &ModelConfig,
    ) -> Result<EncodedExample> {
        if history.is_empty() {
            return Err(Error::Precondition("empty purchase history".into()));
        }
        let start = history.len().saturating_sub(cfg.history_len);
        let mut history_items = Vec::with_capacity(history.len() - start);
        let mut history_days = Vec::with_capacity(history.len() - start);
        for p in &history[start..] {
            history_items.push(self.intern(&p.item, false, tokenizer, cfg)?);
            history_days.push(p.purchase_day);
        }
        let context = self.intern(target, true, tokenizer, cfg)?;
        Ok(EncodedExample {
            history_items,
            history_days,
            context,
            target_day,
            label,
        })
    }
}

/// Builds a deduplicated batch; item rows follow first appearance.
pub fn make_batch<'a>(
    corpus: &'a ItemCorpus,
    examples: &[&EncodedExample],
    reference: TemporalReference,
    cfg: &ModelConfig,
) -> Result<(Batch<'a>, Vec<usize>)> {
    let mut rows: HashMap<usize, usize> = HashMap::new();
    let mut items = Vec::new();
    let mut row_of = |i: usize, items: &mut Vec<&'a ItemTokens>| {
        *rows.entry(i).or_insert_with(|| {
            items.push(corpus.get(i));
            items.len() - 1
        })
    };
    let mut histories = Vec::with_capacity(examples.len());
    let mut contexts = Vec::with_capacity(examples.len());
    let mut labels = Vec::with_capacity(examples.len());
    for ex in examples {
        let rday = reference.reference_day(&ex.history_days, ex.target_day);
        let mut slots = HistorySlots {
            items: Vec::with_capacity(ex.history_items.len()),
            temporal_ids: Vec::with_capacity(ex.history_items.len()),
        };
        for (&it, &day) in ex.history_items.iter().zip(&ex.history_days) {
            slots.items.push(row_of(it, &mut items));
            slots.temporal_ids.push(temporal_id(day, rday, cfg.n_temporal_ids)?);
        }
        histories.push(slots);
        contexts.push(row_of(ex.context, &mut items));
        labels.push(ex.label);
    }
    Ok((
        Batch {
            items,
            histories,
            contexts,
        },
        labels,
    ))
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: ModelConfig,
    tokenizer: String,
    sizes: Vec<String>,
    #[serde(default)]
    run_config: Option<serde_json::Value>,
}

/// A trained size model with everything needed to featurize raw items.
#[derive(Clone, Debug, PartialEq)]
pub struct SizeModel {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub tokenizer: BpeVocab,
    pub sizes: SizeVocabulary,
    /// Resolved settings of the run that produced the model, if recorded.
    pub run_config: Option<serde_json::Value>,
}

impl SizeModel {
    pub fn new(config: ModelConfig, tokenizer: BpeVocab, sizes: SizeVocabulary, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Self::from_parts(config, params, tokenizer, sizes)
    }

    pub fn from_parts(
        config: ModelConfig,
        params: ModelParams<f32>,
        tokenizer: BpeVocab,
        sizes: SizeVocabulary,
    ) -> Result<Self> {
        config.validate()?;
        if config.n_classes != sizes.len() {
            return Err(Error::Config(format!(
                "model has {} classes but the size vocabulary has {}",
                config.n_classes,
                sizes.len()
            )));
        }
        if config.vocab_size < tokenizer.vocab_size() {
            return Err(Error::Config(format!(
                "embedding table of {} rows cannot hold {} tokens",
                config.vocab_size,
                tokenizer.vocab_size()
            )));
        }
        Ok(Self {
            config,
            params,
            tokenizer,
            sizes,
            run_config: None,
        })
    }

    pub fn item_tokens(&self, item: &Item, masked: bool) -> Result<ItemTokens> {
        item_token_triplets(item, &self.tokenizer, &self.config, masked)
    }

    /// Item embeddings `[N, d]`, computed in chunks.
    pub fn item_embeddings(&self, items: &[&ItemTokens]) -> Result<Tensor<f32>> {
        let d = self.config.dim;
        let mut out = Vec::with_capacity(items.len() * d);
        for chunk in items.chunks(128) {
            let (e, _) = network::encode_items(&self.params, &self.config, chunk)?;
            out.extend_from_slice(e.data());
        }
        Ok(Tensor::new(vec![items.len(), d], out)?)
    }

    pub fn embed_item(&self, item: &Item, masked: bool) -> Result<Vec<f32>> {
        let t = self.item_tokens(item, masked)?;
        Ok(self.item_embeddings(&[&t])?.into_data())
    }

    /// Predicts the size distribution of `target` bought on `target_day`.
    pub fn predict(
        &self,
        history: &[Purchase],
        target: &Item,
        target_day: u32,
        reference: TemporalReference,
    ) -> Result<SizeDistribution> {
        let mut corpus = ItemCorpus::new();
        let ex = corpus.encode_example(history, target, target_day, 0, &self.tokenizer, &self.config)?;
        Ok(self.predict_encoded(&corpus, &[&ex], reference)?.remove(0))
    }

    /// Batched prediction over dataset examples.
    pub fn predict_examples(
        &self,
        examples: &[TrainingExample],
        reference: TemporalReference,
        batch_size: usize,
    ) -> Result<Vec<SizeDistribution>> {
        let mut corpus = ItemCorpus::new();
        let encoded = examples
            .iter()
            .map(|e| {
                corpus.encode_example(
                    &e.history,
                    e.target_item(),
                    e.target_day(),
                    e.label_id,
                    &self.tokenizer,
                    &self.config,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Vec::with_capacity(encoded.len());
        for chunk in encoded.chunks(batch_size.max(1)) {
            let refs: Vec<&EncodedExample> = chunk.iter().collect();
            out.extend(self.predict_encoded(&corpus, &refs, reference)?);
        }
        Ok(out)
    }

    pub fn predict_encoded(
        &self,
        corpus: &ItemCorpus,
        examples: &[&EncodedExample],
        reference: TemporalReference,
    ) -> Result<Vec<SizeDistribution>> {
        if examples.is_empty() {
            return Ok(Vec::new());
        }
        let (batch, _) = make_batch(corpus, examples, reference, &self.config)?;
        let (logits, _) = network::forward(&self.params, &self.config, &batch)?;
        Ok(distributions(&logits))
    }

    /// Prediction from precomputed embeddings: `history` holds unmasked item
    /// embeddings with purchase days, `context` the masked target embedding.
    pub fn predict_from_embeddings(
        &self,
        history: &[(&[f32], u32)],
        context: &[f32],
        target_day: u32,
        reference: TemporalReference,
    ) -> Result<SizeDistribution> {
        let d = self.config.dim;
        if history.is_empty() {
            return Err(Error::Precondition("empty purchase history".into()));
        }
        let start = history.len().saturating_sub(self.config.history_len);
        let history = &history[start..];
        let days: Vec<u32> = history.iter().map(|h| h.1).collect();
        let rday = reference.reference_day(&days, target_day);
        let mut rows = Vec::with_capacity((history.len() + 1) * d);
        let mut slots = HistorySlots {
            items: Vec::new(),
            temporal_ids: Vec::new(),
        };
        for (i, (emb, day)) in history.iter().enumerate() {
            if emb.len() != d || context.len() != d {
                return Err(Error::Precondition(format!("embedding of width {} for dim {d}", emb.len())));
            }
            rows.extend_from_slice(emb);
            slots.items.push(i);
            slots.temporal_ids.push(temporal_id(*day, rday, self.config.n_temporal_ids)?);
        }
        let item_emb = Tensor::new(vec![history.len(), d], rows)?;
        let (buyer, _) = network::encode_histories(&self.params, &self.config, &item_emb, &[slots])?;
        let ctx = Tensor::new(vec![1, d], context.to_vec())?;
        let (logits, _) = network::classify(&self.params, &buyer, &ctx)?;
        Ok(distributions(&logits).remove(0))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            config: self.config.clone(),
            tokenizer: self.tokenizer.to_text(),
            sizes: self.sizes.labels().to_vec(),
            run_config: self.run_config.clone(),
        };
        checkpoint::encode(MODEL_MAGIC, &header, &named_tensors(&self.params))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let dec = checkpoint::decode::<ModelHeader>(MODEL_MAGIC, bytes)?;
        let h = dec.header;
        let tokenizer = BpeVocab::from_text(&h.tokenizer)?;
        let sizes = SizeVocabulary::from_labels(h.sizes)?;
        let mut params = ModelParams::init(&h.config, 0)?;
        checkpoint::assign(&mut params, &dec.tensors)?;
        let mut m = Self::from_parts(h.config, params, tokenizer, sizes)?;
        m.run_config = h.run_config;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Loads a checkpoint and requires its architecture to match `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let m = Self::load(path)?;
        if &m.config != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint configuration differs from the requested one (dim {} vs {}, layers {} vs {})",
                m.config.dim, expected.dim, m.config.n_layers, expected.n_layers
            )));
        }
        Ok(m)
    }

    /// SHA-256 of the serialized model.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(checkpoint::sha256_hex(&self.to_bytes()?))
    }
}

fn distributions(logits: &Tensor<f32>) -> Vec<SizeDistribution> {
    let p = softmax(logits);
    (0..p.rows())
        .map(|i| SizeDistribution {
            probs: p.row(i).iter().map(|&v| v as f64).collect(),
        })
        .collect()
}
