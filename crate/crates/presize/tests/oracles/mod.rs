//! Brute-force reference implementations shared by the property suites and
//! the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use presize::data::{Item, Purchase, SizeVocabulary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct RandomShop {
    pub vocab: SizeVocabulary,
    pub training: Vec<Purchase>,
    pub buyers: Vec<Vec<Purchase>>,
    pub targets: Vec<Arc<Item>>,
}

fn random_path(rng: &mut ChaCha8Rng) -> Vec<String> {
    let depth = rng.random_range(1..=3);
    let mut path = Vec::new();
    for level in 0..depth {
        let branch = rng.random_range(0..3);
        path.push(format!("c{level}{branch}"));
    }
    path
}

/// Up to 30 buyers over a category tree of depth at most 3. Some labels fall
/// outside the vocabulary and must be ignored.
pub fn random_shop(seed: u64) -> RandomShop {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_labels = rng.random_range(2..=6);
    let labels: Vec<String> = (0..n_labels).map(|i| format!("z{i}")).collect();
    let vocab = SizeVocabulary::from_labels(labels.clone()).unwrap();
    let mut next_id = 0;
    let mut purchase = |rng: &mut ChaCha8Rng| {
        let label = if rng.random::<f64>() < 0.05 {
            "unknown".to_string()
        } else {
            labels[rng.random_range(0..n_labels)].clone()
        };
        // ids are unique but unrelated to history order
        next_id += 1;
        let id = format!("i{:04}", (next_id * 7919) % 10_000);
        let it = Item::new(id, random_path(rng), [("title".to_string(), "thing".to_string()), ("size".to_string(), label.clone())]).unwrap();
        Purchase {
            item: Arc::new(it),
            purchase_day: rng.random_range(0..6),
            size_label: label,
        }
    };
    let n_buyers = rng.random_range(1..=30);
    let mut buyers = Vec::new();
    for _ in 0..n_buyers {
        let n = rng.random_range(0..8);
        buyers.push((0..n).map(|_| purchase(&mut rng)).collect::<Vec<_>>());
    }
    let training: Vec<Purchase> = buyers.iter().flatten().filter(|_| rng.random::<f64>() < 0.8).cloned().collect();
    let targets = (0..n_buyers)
        .map(|_| Arc::new(Item::new("target", random_path(&mut rng), [("title".to_string(), "thing".to_string())]).unwrap()))
        .collect();
    RandomShop {
        vocab,
        training,
        buyers,
        targets,
    }
}

fn shares_prefix(path: &[String], target: &[String], k: usize) -> bool {
    if path.len() < k {
        return false;
    }
    (0..k).all(|i| path[i] == target[i])
}

fn count(vocab: &SizeVocabulary, ps: &[&Purchase]) -> Vec<u64> {
    let mut c = vec![0; vocab.len()];
    for p in ps {
        for (i, l) in vocab.labels().iter().enumerate() {
            if *l == p.size_label {
                c[i] += 1;
            }
        }
    }
    c
}

/// Counts at the deepest target prefix with any in-vocabulary purchase,
/// falling back to all purchases.
fn deepest_counts(vocab: &SizeVocabulary, purchases: &[Purchase], target: &Item) -> Option<Vec<u64>> {
    let mut k = target.category_path.len() as i64;
    while k >= 0 {
        let at: Vec<&Purchase> = purchases
            .iter()
            .filter(|p| shares_prefix(&p.item.category_path, &target.category_path, k as usize))
            .collect();
        let c = count(vocab, &at);
        if c.iter().sum::<u64>() > 0 {
            return Some(c);
        }
        k -= 1;
    }
    None
}

pub fn argmax_low(c: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..c.len() {
        if c[i] > c[best] {
            best = i;
        }
    }
    best
}

fn share(c: &[u64]) -> Vec<f64> {
    let t: u64 = c.iter().sum();
    if t == 0 {
        return vec![1.0 / c.len() as f64; c.len()];
    }
    c.iter().map(|&x| x as f64 / t as f64).collect()
}

pub fn mcv(vocab: &SizeVocabulary, training: &[Purchase], target: &Item) -> Vec<f64> {
    share(&deepest_counts(vocab, training, target).unwrap_or_else(|| count(vocab, &training.iter().collect::<Vec<_>>())))
}

pub fn pmcv(vocab: &SizeVocabulary, training: &[Purchase], history: &[Purchase], target: &Item) -> Vec<f64> {
    match deepest_counts(vocab, history, target) {
        Some(c) => share(&c),
        None => mcv(vocab, training, target),
    }
}

pub fn mrv(vocab: &SizeVocabulary, training: &[Purchase], history: &[Purchase], target: &Item) -> Vec<f64> {
    let mut sorted: Vec<&Purchase> = history.iter().filter(|p| vocab.id(&p.size_label).is_some()).collect();
    sorted.sort_by(|a, b| (b.purchase_day, &b.item.item_id).cmp(&(a.purchase_day, &a.item.item_id)));
    for k in (0..=target.category_path.len()).rev() {
        if let Some(p) = sorted.iter().find(|p| shares_prefix(&p.item.category_path, &target.category_path, k)) {
            let mut out = vec![0.0; vocab.len()];
            out[vocab.id(&p.size_label).unwrap()] = 1.0;
            return out;
        }
    }
    mcv(vocab, training, target)
}

/// Per-class precision/recall/F1 from an explicit confusion matrix.
pub struct ConfusionOracle {
    pub matrix: Vec<Vec<u64>>,
}

impl ConfusionOracle {
    pub fn new(pred: &[usize], truth: &[usize], n: usize) -> Self {
        let mut matrix = vec![vec![0; n]; n];
        for (&p, &t) in pred.iter().zip(truth) {
            matrix[t][p] += 1;
        }
        Self { matrix }
    }

    fn tp(&self, c: usize) -> f64 {
        self.matrix[c][c] as f64
    }

    fn col(&self, c: usize) -> f64 {
        self.matrix.iter().map(|r| r[c]).sum::<u64>() as f64
    }

    fn row(&self, c: usize) -> f64 {
        self.matrix[c].iter().sum::<u64>() as f64
    }

    pub fn micro_precision(&self) -> f64 {
        let n = self.matrix.len();
        let total: f64 = (0..n).map(|c| self.row(c)).sum();
        (0..n).map(|c| self.tp(c)).sum::<f64>() / total
    }

    /// (precision, recall, f1) for one class; zero when undefined.
    pub fn class(&self, c: usize) -> (f64, f64, f64) {
        let p = if self.col(c) > 0.0 { self.tp(c) / self.col(c) } else { 0.0 };
        let r = if self.row(c) > 0.0 { self.tp(c) / self.row(c) } else { 0.0 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (p, r, f)
    }

    /// Macro averages over classes that occur in the truth.
    pub fn macro_prf(&self) -> (f64, f64, f64) {
        let present: Vec<usize> = (0..self.matrix.len()).filter(|&c| self.row(c) > 0.0).collect();
        let k = present.len() as f64;
        let mut acc = (0.0, 0.0, 0.0);
        for &c in &present {
            let (p, r, f) = self.class(c);
            acc.0 += p;
            acc.1 += r;
            acc.2 += f;
        }
        (acc.0 / k, acc.1 / k, acc.2 / k)
    }
}

pub fn label_map(vocab: &SizeVocabulary) -> BTreeMap<String, usize> {
    vocab.labels().iter().enumerate().map(|(i, l)| (l.clone(), i)).collect()
}
