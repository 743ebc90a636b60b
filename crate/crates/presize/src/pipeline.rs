//! Glue shared by the command line and the experiment harnesses: dataset
//! preparation, ablation settings and scoring helpers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::baselines::{Baseline, CategorySizeStats};
use crate::data::{
    build_size_vocab, filter_dataset, prepare_histories, split_temporal, AttributeRegistry, FilterConfig, Purchase,
    PurchaseHistory, PurchaseRecord, SizeNormalizer, SizeVocabulary, Split, SplitConfig, TrainingExample, CATEGORY, SIZE,
    TITLE,
};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SizeDistribution};
use crate::tokenizer::{train_bpe, BpeVocab};
use crate::training::TrainConfig;

/// Filter thresholds suited to desk-scale synthetic data.
pub fn synthetic_filter() -> FilterConfig {
    FilterConfig {
        min_purchases: 5,
        min_count: 20,
        min_frac: 0.01,
    }
}

/// Training settings sized for a single CPU core on the synthetic world.
pub fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 512,
        lr0: 4e-3,
        lr_floor: 4e-3 / 16.0,
        eval_every: 100,
        val_sample: 2000,
        patience: 2,
        seed,
        max_iterations: Some(1500),
        ..TrainConfig::default()
    }
}

/// A filtered, split dataset with its label space and attribute registry.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub histories: Vec<PurchaseHistory>,
    pub vocab: SizeVocabulary,
    pub registry: AttributeRegistry,
    pub split: Split,
    pub split_config: SplitConfig,
}

impl Dataset {
    pub fn from_records(
        records: &[PurchaseRecord],
        normalizer: &SizeNormalizer,
        filter: &FilterConfig,
        split_config: SplitConfig,
    ) -> Result<Self> {
        let histories = prepare_histories(records, normalizer, SIZE)?;
        let histories = filter_dataset(histories, filter)?;
        let vocab = build_size_vocab(&histories);
        let split = split_temporal(&histories, &vocab, &split_config)?;
        let registry = registry_for(records)?;
        Ok(Self {
            histories,
            vocab,
            registry,
            split,
            split_config,
        })
    }

    /// Purchases made before the validation period.
    pub fn training_purchases(&self) -> impl Iterator<Item = &Purchase> {
        let start = self.split.val_start(&self.split_config);
        self.histories
            .iter()
            .flat_map(|h| &h.purchases)
            .filter(move |p| (p.purchase_day as i64) < start)
    }

    pub fn baseline_stats(&self) -> CategorySizeStats {
        CategorySizeStats::build(self.vocab.clone(), self.training_purchases())
    }

    /// Byte-pair vocabulary learned from the training-period item text.
    pub fn train_tokenizer(&self, vocab_size: usize) -> Result<BpeVocab> {
        let mut seen = BTreeSet::new();
        let mut corpus = Vec::new();
        for p in self.training_purchases() {
            if seen.insert((p.item.item_id.as_str(), p.size_label.as_str())) {
                corpus.push(p.item.category_string());
                corpus.extend(p.item.attributes.values().cloned());
            }
        }
        let refs: Vec<&str> = corpus.iter().map(|s| s.as_str()).collect();
        train_bpe(refs, vocab_size)
    }
}

/// Registry with `size` as the label attribute and every other observed
/// attribute name as context, sorted.
pub fn registry_for(records: &[PurchaseRecord]) -> Result<AttributeRegistry> {
    let names: BTreeSet<&str> = records
        .iter()
        .flat_map(|r| r.attributes.keys().map(|k| k.as_str()))
        .filter(|k| ![TITLE, SIZE, CATEGORY].contains(k))
        .collect();
    AttributeRegistry::new(vec![SIZE.to_string()], names.into_iter().map(String::from).collect())
}

/// Input removal applied before serialization.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    None,
    /// Drop one attribute (title, category or a context attribute).
    Remove(String),
    /// Drop every context attribute.
    RemoveAllContext,
    /// Zero and freeze the temporal table.
    RemoveTemporal,
    /// Drop every context attribute but this one.
    KeepOnly(String),
}

impl Ablation {
    /// Parses the command-line form of `--remove`.
    pub fn parse_remove(s: &str) -> Self {
        match s {
            "temporal" => Ablation::RemoveTemporal,
            "all-context" => Ablation::RemoveAllContext,
            other => Ablation::Remove(other.to_string()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Ablation::None => "full".into(),
            Ablation::Remove(a) => format!("remove-{a}"),
            Ablation::RemoveAllContext => "remove-all-context".into(),
            Ablation::RemoveTemporal => "remove-temporal".into(),
            Ablation::KeepOnly(a) => format!("keep-only-{a}"),
        }
    }

    pub fn apply(&self, cfg: &mut ModelConfig) -> Result<()> {
        let context: Vec<String> = cfg.attributes.context_attributes().map(String::from).collect();
        let known = |a: &str| {
            if cfg.attributes.id(a).is_some() && !cfg.attributes.is_size_attribute(a) {
                Ok(())
            } else {
                Err(Error::UnknownAttribute(a.to_string()))
            }
        };
        match self {
            Ablation::None => {}
            Ablation::Remove(a) => {
                known(a)?;
                cfg.removed_attributes.push(a.clone());
            }
            Ablation::RemoveAllContext => cfg.removed_attributes.extend(context),
            Ablation::RemoveTemporal => cfg.use_temporal = false,
            Ablation::KeepOnly(a) => {
                known(a)?;
                if !context.contains(a) {
                    return Err(Error::Config(format!("`{a}` is not a context attribute")));
                }
                cfg.removed_attributes.extend(context.into_iter().filter(|c| c != a));
            }
        }
        cfg.removed_attributes.sort();
        cfg.removed_attributes.dedup();
        Ok(())
    }
}

pub fn predict_baseline(kind: Baseline, stats: &CategorySizeStats, examples: &[TrainingExample]) -> Vec<SizeDistribution> {
    examples
        .iter()
        .map(|e| kind.predict(e.target_item(), &e.history, stats))
        .collect()
}

pub fn argmaxes(dists: &[SizeDistribution]) -> Vec<usize> {
    dists.iter().map(|d| d.argmax()).collect()
}

/// Share of examples whose label equals the prediction.
pub fn accuracy(preds: &[usize], examples: &[TrainingExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(examples).filter(|(p, e)| **p == e.label_id).count();
    hits as f64 / examples.len() as f64
}
