use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    Item, Purchase, PurchaseHistory, SizeNormalizer, SizeVocabulary, TrainingExample,
};
use crate::error::{Error, Result};

/// One line of the ingestion format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurchaseRecord {
    pub buyer_id: String,
    pub item_id: String,
    pub day: u32,
    pub category_path: Vec<String>,
    pub attributes: BTreeMap<String, String>,
}

pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<PurchaseRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records<W: Write>(mut writer: W, records: &[PurchaseRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Turns raw records into sorted purchase histories.
///
/// The value of `size_attribute` is normalized; purchases whose size is
/// missing or uninformative are dropped. The normalized label replaces the
/// raw value on the item. Buyers come out sorted by id.
pub fn prepare_histories(
    records: &[PurchaseRecord],
    normalizer: &SizeNormalizer,
    size_attribute: &str,
) -> Result<Vec<PurchaseHistory>> {
    let mut by_buyer: BTreeMap<&str, Vec<Purchase>> = BTreeMap::new();
    let mut interned: HashMap<Item, Arc<Item>> = HashMap::new();
    for r in records {
        let Some(label) = r.attributes.get(size_attribute).and_then(|v| normalizer.normalize(v)) else {
            continue;
        };
        let mut attrs = r.attributes.clone();
        attrs.insert(size_attribute.to_string(), label.clone());
        let item = Item {
            item_id: r.item_id.clone(),
            category_path: r.category_path.clone(),
            attributes: attrs,
        };
        item.validate()?;
        let item = interned.entry(item.clone()).or_insert_with(|| Arc::new(item)).clone();
        by_buyer.entry(&r.buyer_id).or_default().push(Purchase {
            item,
            purchase_day: r.day,
            size_label: label,
        });
    }
    Ok(by_buyer
        .into_iter()
        .map(|(b, p)| PurchaseHistory::new(b, p))
        .collect())
}

/// Thresholds of the dataset filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_purchases: usize,
    /// Minimum occurrences of a label within a leaf category.
    pub min_count: usize,
    /// Minimum share of a label within a leaf category.
    pub min_frac: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_purchases: 5,
            min_count: 500,
            min_frac: 0.01,
        }
    }
}

/// Drops rare per-category size labels, then buyers with too few purchases.
///
/// Removing buyers changes category counts, so both steps repeat until
/// nothing changes; the output is a fixed point of the filter.
pub fn filter_dataset(histories: Vec<PurchaseHistory>, cfg: &FilterConfig) -> Result<Vec<PurchaseHistory>> {
    let mut current = histories;
    loop {
        let before: usize = current.iter().map(|h| h.purchases.len()).sum();
        let buyers_before = current.len();
        let mut counts: HashMap<(&[String], &str), usize> = HashMap::new();
        let mut totals: HashMap<&[String], usize> = HashMap::new();
        for p in current.iter().flat_map(|h| &h.purchases) {
            *counts
                .entry((p.item.category_path.as_slice(), p.size_label.as_str()))
                .or_default() += 1;
            *totals.entry(p.item.category_path.as_slice()).or_default() += 1;
        }
        let keep: HashSet<(Vec<String>, String)> = counts
            .iter()
            .filter(|(&(cat, _), &n)| n >= cfg.min_count && (n as f64) >= cfg.min_frac * totals[cat] as f64)
            .map(|(&(cat, label), _)| (cat.to_vec(), label.to_string()))
            .collect();
        let next: Vec<PurchaseHistory> = current
            .into_iter()
            .map(|mut h| {
                h.purchases
                    .retain(|p| keep.contains(&(p.item.category_path.clone(), p.size_label.clone())));
                h
            })
            .filter(|h| h.purchases.len() >= cfg.min_purchases && !h.purchases.is_empty())
            .collect();
        let after: usize = next.iter().map(|h| h.purchases.len()).sum();
        current = next;
        if after == before && current.len() == buyers_before {
            break;
        }
    }
    if current.is_empty() {
        return Err(Error::EmptyDataset("no purchases survive filtering".into()));
    }
    Ok(current)
}

/// Ids by descending frequency, ties broken lexicographically.
pub fn build_size_vocab(histories: &[PurchaseHistory]) -> SizeVocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for p in histories.iter().flat_map(|h| &h.purchases) {
        *counts.entry(p.size_label.as_str()).or_default() += 1;
    }
    let mut labels: Vec<(&str, usize)> = counts.into_iter().collect();
    labels.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    SizeVocabulary::from_labels(labels.into_iter().map(|(l, _)| l.to_string()).collect())
        .expect("labels are unique")
}

/// One example per purchase that has at least one earlier purchase; the
/// history holds the `max_history` most recent earlier purchases.
pub fn build_examples(
    history: &PurchaseHistory,
    vocab: &SizeVocabulary,
    max_history: usize,
) -> Result<Vec<TrainingExample>> {
    debug_assert!(history.is_sorted());
    let p = &history.purchases;
    let mut out = Vec::with_capacity(p.len().saturating_sub(1));
    for i in 1..p.len() {
        let label_id = vocab
            .id(&p[i].size_label)
            .ok_or_else(|| Error::UnknownLabel(p[i].size_label.clone()))?;
        let start = i.saturating_sub(max_history);
        out.push(TrainingExample {
            buyer_id: history.buyer_id.clone(),
            history: p[start..i].to_vec(),
            target: p[i].clone(),
            label_id,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_days: u32,
    pub val_days: u32,
    pub max_history: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_days: 5,
            val_days: 5,
            max_history: 25,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<TrainingExample>,
    pub val: Vec<TrainingExample>,
    pub test: Vec<TrainingExample>,
    /// Last day of the dataset.
    pub max_day: u32,
    pub warnings: Vec<String>,
}

impl Split {
    /// First day belonging to the validation period.
    pub fn val_start(&self, cfg: &SplitConfig) -> i64 {
        self.max_day as i64 - cfg.test_days as i64 - cfg.val_days as i64 + 1
    }
}

/// Partitions examples by target day: the last `test_days` days are test,
/// the `val_days` before that validation, the rest training.
pub fn split_temporal(histories: &[PurchaseHistory], vocab: &SizeVocabulary, cfg: &SplitConfig) -> Result<Split> {
    let max_day = histories
        .iter()
        .flat_map(|h| h.purchases.iter().map(|p| p.purchase_day))
        .max()
        .ok_or_else(|| Error::EmptyDataset("no purchases to split".into()))?;
    let test_start = max_day as i64 - cfg.test_days as i64 + 1;
    let val_start = test_start - cfg.val_days as i64;
    let mut split = Split {
        max_day,
        ..Default::default()
    };
    for h in histories {
        for ex in build_examples(h, vocab, cfg.max_history)? {
            let day = ex.target_day() as i64;
            if day >= test_start {
                split.test.push(ex);
            } else if day >= val_start {
                split.val.push(ex);
            } else {
                split.train.push(ex);
            }
        }
    }
    for (name, set) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        if set.is_empty() {
            split.warnings.push(format!("empty split: {name}"));
        }
    }
    Ok(split)
}

