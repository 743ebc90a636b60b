#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use presize::data::{AttributeRegistry, Item, Purchase, SizeVocabulary, TrainingExample};
use presize::model::{ModelConfig, SizeModel};
use presize::tokenizer::{train_bpe, BpeVocab};

pub fn registry() -> AttributeRegistry {
    AttributeRegistry::new(vec!["size".into()], vec!["brand".into(), "department".into(), "type".into()]).unwrap()
}

pub fn item(id: &str, path: &[&str], attrs: &[(&str, &str)]) -> Arc<Item> {
    let attributes: BTreeMap<String, String> = attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    Arc::new(Item::new(id, path.iter().map(|s| s.to_string()).collect(), attributes).unwrap())
}

pub fn shirt(id: &str, title: &str, size: &str, brand: &str) -> Arc<Item> {
    item(
        id,
        &["men", "tops", "shirts"],
        &[("title", title), ("size", size), ("brand", brand), ("department", "men"), ("type", "tops")],
    )
}

pub fn buy(it: &Arc<Item>, day: u32) -> Purchase {
    Purchase {
        item: it.clone(),
        purchase_day: day,
        size_label: it.attribute("size").unwrap_or("m").to_string(),
    }
}

pub fn sizes() -> SizeVocabulary {
    SizeVocabulary::from_labels(["s", "m", "l", "xl"].iter().map(|s| s.to_string()).collect()).unwrap()
}

pub fn tokenizer() -> BpeVocab {
    train_bpe(
        ["classic shirt", "slim shirt", "men:tops:shirts", "acme", "northwind", "men", "tops"],
        300,
    )
    .unwrap()
}

pub fn tiny_config(dim: usize, layers: usize) -> ModelConfig {
    let tok = tokenizer();
    let mut c = ModelConfig::new(4, tok.vocab_size(), registry()).with_dim(dim);
    c.n_layers = layers;
    c.heads = 2;
    c
}

pub fn tiny_model(dim: usize, layers: usize, seed: u64) -> SizeModel {
    SizeModel::new(tiny_config(dim, layers), tokenizer(), sizes(), seed).unwrap()
}

/// A buyer with `n` shirts on consecutive days and one more as target.
pub fn example(n: usize, seed: usize) -> TrainingExample {
    let labels = ["s", "m", "l", "xl"];
    let brands = ["acme", "northwind"];
    let history: Vec<Purchase> = (0..n)
        .map(|i| {
            let k = (i * 7 + seed * 3) % 4;
            let it = shirt(&format!("i{}", (i + seed) % 9), "classic shirt", labels[k], brands[(i + seed) % 2]);
            buy(&it, i as u32 * 3)
        })
        .collect();
    let t = shirt("target", "slim shirt", labels[seed % 4], brands[seed % 2]);
    TrainingExample {
        buyer_id: format!("b{seed}"),
        history,
        target: buy(&t, n as u32 * 3 + 2),
        label_id: seed % 4,
    }
}

/// A small synthetic dataset, split and filtered.
pub fn small_dataset(seed: u64) -> presize::pipeline::Dataset {
    use presize::data::{FilterConfig, SizeNormalizer, SplitConfig};
    use presize::synthgen::{generate_histories, generate_world, WorldConfig};
    let wc = WorldConfig {
        n_buyers: 60,
        n_purchases: 900,
        n_items: 80,
        seed,
        ..Default::default()
    };
    let world = generate_world(&wc).unwrap();
    let (records, _) = generate_histories(&world).unwrap();
    let filter = FilterConfig {
        min_purchases: 2,
        min_count: 1,
        min_frac: 0.0,
    };
    presize::pipeline::Dataset::from_records(&records, &SizeNormalizer::default(), &filter, SplitConfig::default()).unwrap()
}

pub fn dataset_model(ds: &presize::pipeline::Dataset, dim: usize, seed: u64) -> SizeModel {
    let tok = ds.train_tokenizer(400).unwrap();
    let mut c = ModelConfig::new(ds.vocab.len(), tok.vocab_size(), ds.registry.clone()).with_dim(dim);
    c.n_layers = 1;
    c.heads = 2;
    SizeModel::new(c, tok, ds.vocab.clone(), seed).unwrap()
}
