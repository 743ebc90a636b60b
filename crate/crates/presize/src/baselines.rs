//! Heuristic size predictors with category-tree back-off.

use serde::{Deserialize, Serialize};

use crate::data::{ancestors, CategoryTree, Item, Purchase, SizeVocabulary};
use crate::model::SizeDistribution;

/// Size-label counts per category node. A node's counts cover every
/// purchase whose path passes through it; the root covers all purchases.
#[derive(Clone, Debug, PartialEq)]
pub struct CategorySizeStats {
    vocab: SizeVocabulary,
    tree: CategoryTree<Vec<u64>>,
    global: Vec<u64>,
}

impl CategorySizeStats {
    pub fn new(vocab: SizeVocabulary) -> Self {
        let n = vocab.len();
        let mut tree = CategoryTree::new();
        *tree.node_mut(&[]).expect("root") = vec![0; n];
        Self {
            vocab,
            tree,
            global: vec![0; n],
        }
    }

    /// Counts `(item, label)` observations; labels outside the vocabulary
    /// are ignored.
    pub fn build<'a>(vocab: SizeVocabulary, purchases: impl IntoIterator<Item = &'a Purchase>) -> Self {
        let mut s = Self::new(vocab);
        for p in purchases {
            s.add(p);
        }
        s
    }

    pub fn add(&mut self, p: &Purchase) {
        let Some(label) = self.vocab.id(&p.size_label) else {
            return;
        };
        let n = self.vocab.len();
        self.global[label] += 1;
        self.tree.insert_path(&p.item.category_path);
        self.tree.node_mut(&[]).expect("root")[label] += 1;
        for prefix in ancestors(&p.item.category_path) {
            let node = self.tree.node_mut(prefix).expect("inserted");
            if node.is_empty() {
                node.resize(n, 0);
            }
            node[label] += 1;
        }
    }

    pub fn vocab(&self) -> &SizeVocabulary {
        &self.vocab
    }

    pub fn counts(&self, prefix: &[String]) -> Option<&[u64]> {
        self.tree.node(prefix).filter(|c| !c.is_empty()).map(|c| c.as_slice())
    }

    pub fn global(&self) -> &[u64] {
        &self.global
    }

    pub fn tree(&self) -> &CategoryTree<Vec<u64>> {
        &self.tree
    }
}

/// Prefixes from the full path down to the root (the empty prefix).
pub fn backoff_levels(path: &[String]) -> impl Iterator<Item = &[String]> {
    (0..=path.len()).rev().map(move |k| &path[..k])
}

/// First level, leaf first and root last, accepted by `probe`; `None` means
/// the caller falls back to global statistics.
pub fn backoff_lookup<'a>(path: &'a [String], mut probe: impl FnMut(&[String]) -> bool) -> Option<&'a [String]> {
    backoff_levels(path).find(|p| probe(p))
}

fn has_data(c: &[u64]) -> bool {
    c.iter().any(|&x| x > 0)
}

fn normalize(counts: &[u64]) -> SizeDistribution {
    let total: u64 = counts.iter().sum();
    let probs = if total == 0 {
        vec![1.0 / counts.len().max(1) as f64; counts.len()]
    } else {
        counts.iter().map(|&c| c as f64 / total as f64).collect()
    };
    SizeDistribution { probs }
}

fn one_hot(n: usize, k: usize) -> SizeDistribution {
    let mut probs = vec![0.0; n];
    probs[k] = 1.0;
    SizeDistribution { probs }
}

/// Most common size in the most granular category with data.
pub fn mcv_predict(target: &Item, stats: &CategorySizeStats) -> SizeDistribution {
    let path = &target.category_path;
    match backoff_lookup(path, |p| stats.counts(p).is_some_and(has_data)) {
        Some(p) => normalize(stats.counts(p).expect("probed")),
        None => normalize(&stats.global),
    }
}

fn under(p: &Purchase, prefix: &[String]) -> bool {
    p.item.category_path.starts_with(prefix)
}

/// Most recently bought size at the most granular level where the buyer
/// has purchases; same-day purchases are ordered by item id. Falls back to
/// MCV.
pub fn mrv_predict(target: &Item, history: &[Purchase], stats: &CategorySizeStats) -> SizeDistribution {
    let vocab = &stats.vocab;
    let labelled: Vec<(&Purchase, usize)> = history
        .iter()
        .filter_map(|p| vocab.id(&p.size_label).map(|l| (p, l)))
        .collect();
    for prefix in backoff_levels(&target.category_path) {
        let newest = labelled
            .iter()
            .filter(|(p, _)| under(p, prefix))
            .max_by(|(a, _), (b, _)| {
                a.purchase_day
                    .cmp(&b.purchase_day)
                    .then_with(|| a.item.item_id.cmp(&b.item.item_id))
            });
        if let Some(&(_, label)) = newest {
            return one_hot(vocab.len(), label);
        }
    }
    mcv_predict(target, stats)
}

/// The buyer's own size marginal at the most granular level where they
/// have purchases. Falls back to MCV.
pub fn pmcv_predict(target: &Item, history: &[Purchase], stats: &CategorySizeStats) -> SizeDistribution {
    let vocab = &stats.vocab;
    for prefix in backoff_levels(&target.category_path) {
        let mut counts = vec![0u64; vocab.len()];
        for p in history.iter().filter(|p| under(p, prefix)) {
            if let Some(l) = vocab.id(&p.size_label) {
                counts[l] += 1;
            }
        }
        if has_data(&counts) {
            return normalize(&counts);
        }
    }
    mcv_predict(target, stats)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Mcv,
    Mrv,
    Pmcv,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [Baseline::Mcv, Baseline::Mrv, Baseline::Pmcv];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Mcv => "mcv",
            Baseline::Mrv => "mrv",
            Baseline::Pmcv => "pmcv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name().eq_ignore_ascii_case(s))
    }

    pub fn predict(self, target: &Item, history: &[Purchase], stats: &CategorySizeStats) -> SizeDistribution {
        match self {
            Baseline::Mcv => mcv_predict(target, stats),
            Baseline::Mrv => mrv_predict(target, history, stats),
            Baseline::Pmcv => pmcv_predict(target, history, stats),
        }
    }
}
