//! Seeded synthetic purchase world with hidden size personas, brand
//! offsets, label noise and kids size drift, plus the Bayes-optimal
//! predictor that knows the hidden state.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{PurchaseRecord, SizeVocabulary, TrainingExample, CATEGORY, SIZE, TITLE};
use crate::error::{Error, Result};
use crate::model::SizeDistribution;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chart {
    pub name: String,
    pub labels: Vec<String>,
}

/// One `(department, item type)` cell of the catalogue.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub department: String,
    pub item_type: String,
    pub chart: String,
    pub leaves: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_buyers: usize,
    pub n_purchases: usize,
    pub n_items: usize,
    pub n_brands: usize,
    pub n_days: u32,
    pub charts: Vec<Chart>,
    pub categories: Vec<CategorySpec>,
    /// Brand offsets are drawn from `-range..=range`.
    pub brand_offset_range: i32,
    /// Share of brands with offset zero, rounded to a whole number of brands.
    pub brand_zero_prob: f64,
    /// Probability of replacing the true label by an adjacent one.
    pub noise: f64,
    /// Kids sizes grow by one every this many days; `None` disables drift.
    pub drift_every_days: Option<u32>,
    pub mixed_persona_prob: f64,
    /// Probability that a persona's index on one chart deviates by one
    /// from its body size.
    pub axis_shift_prob: f64,
    /// Chance an adult purchase is from the unisex department.
    pub unisex_prob: f64,
    /// Persona department weights for men, women and kids.
    pub department_weights: [f64; 3],
    /// Share of buyers who only become active near the end.
    pub late_buyer_frac: f64,
    pub late_buyer_window: u32,
    pub min_purchases_per_buyer: usize,
    /// Share of a chart offered by each item.
    pub availability: f64,
    pub seed: u64,
}

pub const MENS: &str = "men";
pub const WOMENS: &str = "women";
pub const UNISEX: &str = "unisex";
pub const KIDS: &str = "kids";

fn chart(name: &str, labels: &[&str]) -> Chart {
    Chart {
        name: name.into(),
        labels: labels.iter().map(|s| s.to_string()).collect(),
    }
}

fn cat(department: &str, item_type: &str, chart: &str, leaves: &[&str]) -> CategorySpec {
    CategorySpec {
        department: department.into(),
        item_type: item_type.into(),
        chart: chart.into(),
        leaves: leaves.iter().map(|s| s.to_string()).collect(),
    }
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_buyers: 2000,
            n_purchases: 50_000,
            n_items: 300,
            n_brands: 12,
            n_days: 120,
            charts: vec![
                chart("letter", &["xs", "s", "m", "l", "xl", "2xl", "3xl"]),
                chart("mens_waist", &["28", "30", "32", "34", "36", "38", "40"]),
                chart("womens_numeric", &["0", "2", "4", "6", "8", "10", "12"]),
                chart("mens_shoe", &["us 7", "us 8", "us 9", "us 10", "us 11", "us 12", "us 13"]),
                chart("womens_shoe", &["us 5", "us 6", "us 7", "us 8", "us 9", "us 10", "us 11"]),
                chart(
                    "kids_clothing",
                    &["0-3m", "3-6m", "6-12m", "12-18m", "18-24m", "2t", "3t", "4t", "5y", "6y", "7y", "8y"],
                ),
                chart("kids_shoe", &["c4", "c5", "c6", "c7", "c8", "c9", "c10", "c11", "c12", "c13"]),
            ],
            categories: vec![
                cat(MENS, "tops", "letter", &["shirts"]),
                cat(MENS, "bottoms", "mens_waist", &["jeans"]),
                cat(MENS, "footwear", "mens_shoe", &["sneakers"]),
                cat(WOMENS, "tops", "letter", &["blouses"]),
                cat(WOMENS, "bottoms", "womens_numeric", &["jeans"]),
                cat(WOMENS, "dresses", "womens_numeric", &["dresses"]),
                cat(WOMENS, "footwear", "womens_shoe", &["sneakers"]),
                cat(UNISEX, "tops", "letter", &["hoodies"]),
                cat(KIDS, "tops", "kids_clothing", &["tees"]),
                cat(KIDS, "bottoms", "kids_clothing", &["pants"]),
                cat(KIDS, "footwear", "kids_shoe", &["sneakers"]),
            ],
            brand_offset_range: 1,
            brand_zero_prob: 0.7,
            noise: 0.1,
            drift_every_days: Some(40),
            mixed_persona_prob: 0.2,
            axis_shift_prob: 0.05,
            unisex_prob: 0.15,
            department_weights: [0.45, 0.45, 0.1],
            late_buyer_frac: 0.1,
            late_buyer_window: 30,
            min_purchases_per_buyer: 5,
            availability: 0.8,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_brands == 0 {
            return fail("at least one brand is required".into());
        }
        if self.n_buyers == 0 || self.n_days == 0 {
            return fail("buyers and days must be positive".into());
        }
        if !(0.0..0.5).contains(&self.noise) {
            return fail(format!("noise rate {} outside [0, 0.5)", self.noise));
        }
        if self.brand_offset_range < 0 || !(0.0..=1.0).contains(&self.brand_zero_prob) {
            return fail("brand offset settings out of range".into());
        }
        for p in [
            self.mixed_persona_prob,
            self.axis_shift_prob,
            self.unisex_prob,
            self.late_buyer_frac,
            self.availability,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("probability {p} outside [0, 1]"));
            }
        }
        if self.department_weights.iter().any(|&w| w < 0.0) || self.department_weights.iter().sum::<f64>() <= 0.0 {
            return fail("department weights must be non-negative and not all zero".into());
        }
        if self.drift_every_days == Some(0) {
            return fail("drift period must be positive".into());
        }
        for c in &self.charts {
            if c.labels.is_empty() {
                return fail(format!("chart {} is empty", c.name));
            }
        }
        let leaves: usize = self.categories.iter().map(|c| c.leaves.len()).sum();
        if self.n_items < leaves {
            return fail(format!("{} items cannot cover {leaves} leaf categories", self.n_items));
        }
        for c in &self.categories {
            if self.chart(&c.chart).is_none() {
                return fail(format!("category {}/{} uses unknown chart {}", c.department, c.item_type, c.chart));
            }
            if c.leaves.is_empty() {
                return fail(format!("category {}/{} has no leaves", c.department, c.item_type));
            }
            if ![MENS, WOMENS, UNISEX, KIDS].contains(&c.department.as_str()) {
                return fail(format!("unknown department {}", c.department));
            }
        }
        for dept in [MENS, WOMENS, KIDS] {
            if !self.categories.iter().any(|c| c.department == dept) {
                return fail(format!("department {dept} has no categories"));
            }
        }
        if self.unisex_prob > 0.0 && !self.categories.iter().any(|c| c.department == UNISEX) {
            return fail("unisex purchases enabled without unisex categories".into());
        }
        let need = self.n_buyers * self.min_purchases_per_buyer.max(1);
        if self.n_purchases < need {
            return fail(format!("{} purchases cannot give {} buyers their minimum", self.n_purchases, self.n_buyers));
        }
        let max_drift = self.max_drift() as usize;
        for c in self.categories.iter().filter(|c| c.department == KIDS) {
            let len = self.chart(&c.chart).map_or(0, |ch| ch.labels.len());
            if len <= max_drift {
                return fail(format!("chart {} is too short for {max_drift} drift steps", c.chart));
            }
        }
        Ok(())
    }

    pub fn chart(&self, name: &str) -> Option<&Chart> {
        self.charts.iter().find(|c| c.name == name)
    }

    pub fn max_drift(&self) -> u32 {
        self.drift_every_days.map_or(0, |k| (self.n_days - 1) / k)
    }

    /// Size steps gained by a kids persona by `day`.
    pub fn drift(&self, day: u32) -> i32 {
        self.drift_every_days.map_or(0, |k| (day / k) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Brand {
    pub name: String,
    pub offset: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub item_id: String,
    pub department: String,
    pub item_type: String,
    pub leaf: String,
    pub chart: String,
    pub brand: usize,
    pub title: String,
    /// Chart labels this item is offered in.
    pub available: Vec<String>,
}

impl CatalogItem {
    pub fn category_path(&self) -> Vec<String> {
        vec![self.department.clone(), self.item_type.clone(), self.leaf.clone()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub brands: Vec<Brand>,
    pub items: Vec<CatalogItem>,
}

impl World {
    pub fn items_in<'a>(&'a self, department: &'a str) -> impl Iterator<Item = (usize, &'a CatalogItem)> + 'a {
        self.items.iter().enumerate().filter(move |(_, it)| it.department == department)
    }

    /// Looks up a catalog item by catalog id or by a SKU id derived from it.
    pub fn item(&self, id: &str) -> Option<&CatalogItem> {
        let id = id.split_once(SKU_SEPARATOR).map_or(id, |(c, _)| c);
        self.items.iter().find(|it| it.item_id == id)
    }
}

pub const SKU_SEPARATOR: char = '#';

/// Purchased items are SKUs: a catalog item in one size.
pub fn sku_id(catalog_id: &str, label: &str) -> String {
    format!("{catalog_id}{SKU_SEPARATOR}{label}")
}

const ADJECTIVES: [&str; 8] = ["classic", "slim", "relaxed", "essential", "soft", "vintage", "everyday", "sport"];
const COLORS: [&str; 8] = ["black", "white", "navy", "grey", "red", "green", "beige", "blue"];
const BRAND_STEMS: [&str; 16] = [
    "acme", "northwind", "lumen", "fable", "orbit", "cinder", "maple", "harbor", "quill", "ember", "tidal", "juniper",
    "vesper", "cobalt", "aurora", "summit",
];

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Builds brands and the catalogue. Every leaf gets at least one item.
pub fn generate_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    let mut rng = sub_rng(cfg.seed, 1);
    let r = cfg.brand_offset_range;
    // An exact share of brands is off-chart, with alternating sign, so the
    // realized mix does not swing from seed to seed.
    let n_shifted = if r == 0 {
        0
    } else {
        ((1.0 - cfg.brand_zero_prob) * cfg.n_brands as f64).round() as usize
    };
    let mut offsets: Vec<i32> = (0..cfg.n_brands)
        .map(|i| {
            if i >= n_shifted {
                0
            } else {
                let m = rng.random_range(1..=r);
                if i % 2 == 0 { m } else { -m }
            }
        })
        .collect();
    offsets.shuffle(&mut rng);
    let brands = (0..cfg.n_brands)
        .map(|i| {
            let stem = BRAND_STEMS[i % BRAND_STEMS.len()];
            let name = if i < BRAND_STEMS.len() {
                stem.to_string()
            } else {
                format!("{stem}{}", i / BRAND_STEMS.len())
            };
            let offset = offsets[i];
            Brand { name, offset }
        })
        .collect();
    let leaves: Vec<(&CategorySpec, &String)> = cfg
        .categories
        .iter()
        .flat_map(|c| c.leaves.iter().map(move |l| (c, l)))
        .collect();
    let mut items = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let (c, leaf) = if i < leaves.len() {
            leaves[i]
        } else {
            leaves[rng.random_range(0..leaves.len())]
        };
        let labels = &cfg.chart(&c.chart).expect("validated").labels;
        let mut available: Vec<String> = labels
            .iter()
            .filter(|_| rng.random::<f64>() < cfg.availability)
            .cloned()
            .collect();
        if available.is_empty() {
            available.push(labels[rng.random_range(0..labels.len())].clone());
        }
        let noun = leaf.trim_end_matches('s');
        items.push(CatalogItem {
            item_id: format!("i{i:05}"),
            department: c.department.clone(),
            item_type: c.item_type.clone(),
            leaf: leaf.clone(),
            chart: c.chart.clone(),
            brand: rng.random_range(0..cfg.n_brands),
            title: format!(
                "{} {} {}",
                ADJECTIVES.choose(&mut rng).expect("non-empty"),
                COLORS.choose(&mut rng).expect("non-empty"),
                noun
            ),
            available,
        });
    }
    Ok(World {
        config: cfg.clone(),
        brands,
        items,
    })
}

/// Hidden size profile of one wearer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuyerPersona {
    pub department: String,
    /// Chart name to size index at day 0.
    pub size_index: BTreeMap<String, i32>,
    /// Days per one-step size increase.
    pub drift_every_days: Option<u32>,
}

impl BuyerPersona {
    /// Departments this persona buys from.
    pub fn departments(&self, cfg: &WorldConfig) -> Vec<(&'static str, f64)> {
        match self.department.as_str() {
            KIDS => vec![(KIDS, 1.0)],
            MENS => vec![(MENS, 1.0 - cfg.unisex_prob), (UNISEX, cfg.unisex_prob)],
            _ => vec![(WOMENS, 1.0 - cfg.unisex_prob), (UNISEX, cfg.unisex_prob)],
        }
    }

    /// True size index for a chart on a given day, before brand offset.
    pub fn index_at(&self, chart: &str, day: u32) -> Option<i32> {
        let base = *self.size_index.get(chart)?;
        let drift = self.drift_every_days.map_or(0, |k| (day / k) as i32);
        Some(base + drift)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuyerTruth {
    pub buyer_id: String,
    pub personas: Vec<BuyerPersona>,
    pub start_day: u32,
}

/// Hidden state needed by the oracle, persisted next to the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub world: World,
    pub buyers: Vec<BuyerTruth>,
}

impl GroundTruth {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_file(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn buyer(&self, id: &str) -> Option<&BuyerTruth> {
        self.buyers
            .binary_search_by(|b| b.buyer_id.as_str().cmp(id))
            .ok()
            .map(|i| &self.buyers[i])
    }
}

fn charts_for(cfg: &WorldConfig, department: &str) -> Vec<String> {
    let mut v: Vec<String> = cfg
        .categories
        .iter()
        .filter(|c| {
            c.department == department || (department != KIDS && c.department == UNISEX)
        })
        .map(|c| c.chart.clone())
        .collect();
    v.sort();
    v.dedup();
    v
}

fn draw_persona(cfg: &WorldConfig, department: &str, rng: &mut ChaCha8Rng) -> BuyerPersona {
    let mut size_index = BTreeMap::new();
    let kids = department == KIDS;
    let charts = charts_for(cfg, department);
    let body: f64 = if kids {
        rng.random::<f64>()
    } else {
        // center-heavy body size in [0, 1]
        (rng.random::<f64>() + rng.random::<f64>()) / 2.0
    };
    for name in charts {
        let len = cfg.chart(&name).expect("validated").labels.len() as i32;
        let top = if kids { len - 1 - cfg.max_drift() as i32 } else { len - 1 };
        let mut idx = (body * top as f64).round() as i32;
        if rng.random::<f64>() < cfg.axis_shift_prob {
            idx += if rng.random::<bool>() { 1 } else { -1 };
        }
        size_index.insert(name, idx.clamp(0, top.max(0)));
    }
    BuyerPersona {
        department: department.to_string(),
        size_index,
        drift_every_days: if kids { cfg.drift_every_days } else { None },
    }
}

const DEPARTMENTS: [&str; 3] = [MENS, WOMENS, KIDS];

/// Label distribution a persona produces for `item` on `day`: the chart
/// index after brand offset, with the noise mass spread over its
/// neighbours.
pub fn persona_label_distribution(world: &World, persona: &BuyerPersona, item: &CatalogItem, day: u32) -> Option<Vec<(usize, f64)>> {
    let cfg = &world.config;
    let len = cfg.chart(&item.chart)?.labels.len() as i32;
    let idx = (persona.index_at(&item.chart, day)? + world.brands[item.brand].offset).clamp(0, len - 1);
    let neighbours: Vec<i32> = [idx - 1, idx + 1].into_iter().filter(|&j| (0..len).contains(&j)).collect();
    let mut out = vec![(idx as usize, 1.0 - cfg.noise)];
    if neighbours.is_empty() {
        out[0].1 = 1.0;
    } else {
        for j in &neighbours {
            out.push((*j as usize, cfg.noise / neighbours.len() as f64));
        }
    }
    Some(out)
}

fn sample_label(world: &World, persona: &BuyerPersona, item: &CatalogItem, day: u32, rng: &mut ChaCha8Rng) -> String {
    let dist = persona_label_distribution(world, persona, item, day).expect("persona covers its departments");
    let labels = &world.config.chart(&item.chart).expect("validated").labels;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(j, p) in &dist {
        acc += p;
        if u < acc {
            return labels[j].clone();
        }
    }
    labels[dist[0].0].clone()
}

/// Draws buyers and their purchases. Output records are ordered by buyer,
/// then day, then item id; the size label is stored under `size`.
pub fn generate_histories(world: &World) -> Result<(Vec<PurchaseRecord>, GroundTruth)> {
    let cfg = &world.config;
    cfg.validate()?;
    let mut rng = sub_rng(cfg.seed, 2);
    let dept_pick = WeightedIndex::new(cfg.department_weights).map_err(|e| Error::Config(e.to_string()))?;
    let mut buyers = Vec::with_capacity(cfg.n_buyers);
    let mut activity = Vec::with_capacity(cfg.n_buyers);
    for b in 0..cfg.n_buyers {
        let first = DEPARTMENTS[dept_pick.sample(&mut rng)];
        let mut personas = vec![draw_persona(cfg, first, &mut rng)];
        if rng.random::<f64>() < cfg.mixed_persona_prob {
            let others: Vec<&str> = DEPARTMENTS.iter().copied().filter(|d| *d != first).collect();
            let second = others[rng.random_range(0..others.len())];
            personas.push(draw_persona(cfg, second, &mut rng));
        }
        let late = rng.random::<f64>() < cfg.late_buyer_frac;
        let start_day = if late {
            cfg.n_days - cfg.late_buyer_window.min(cfg.n_days)
                + rng.random_range(0..cfg.late_buyer_window.clamp(1, cfg.n_days))
        } else {
            0
        };
        let start_day = start_day.min(cfg.n_days - 1);
        // activity grows with the active window
        let weight = (cfg.n_days - start_day) as f64 * (0.5 + rng.random::<f64>());
        activity.push(weight);
        buyers.push(BuyerTruth {
            buyer_id: format!("b{b:05}"),
            personas,
            start_day,
        });
    }
    let min = cfg.min_purchases_per_buyer.max(1);
    let mut counts = vec![min; cfg.n_buyers];
    let extra = WeightedIndex::new(&activity).map_err(|e| Error::Config(e.to_string()))?;
    for _ in 0..(cfg.n_purchases - min * cfg.n_buyers) {
        counts[extra.sample(&mut rng)] += 1;
    }
    let by_dept: BTreeMap<&str, Vec<usize>> = [MENS, WOMENS, UNISEX, KIDS]
        .iter()
        .map(|d| (*d, world.items_in(d).map(|(i, _)| i).collect()))
        .collect();
    let mut records = Vec::with_capacity(cfg.n_purchases);
    for (buyer, &n) in buyers.iter().zip(&counts) {
        let mut mine = Vec::with_capacity(n);
        for _ in 0..n {
            let day = rng.random_range(buyer.start_day..cfg.n_days);
            let persona = &buyer.personas[rng.random_range(0..buyer.personas.len())];
            let depts = persona.departments(cfg);
            let mut u: f64 = rng.random();
            let mut dept = depts[0].0;
            for &(d, w) in &depts {
                if u < w {
                    dept = d;
                    break;
                }
                u -= w;
            }
            let pool = &by_dept[dept];
            let pool = if pool.is_empty() { &by_dept[persona.departments(cfg)[0].0] } else { pool };
            let item = &world.items[pool[rng.random_range(0..pool.len())]];
            let label = sample_label(world, persona, item, day, &mut rng);
            mine.push(record(buyer, item, world, day, label));
        }
        mine.sort_by(|a, b| (a.day, &a.item_id).cmp(&(b.day, &b.item_id)));
        records.extend(mine);
    }
    Ok((
        records,
        GroundTruth {
            world: world.clone(),
            buyers,
        },
    ))
}

fn record(buyer: &BuyerTruth, item: &CatalogItem, world: &World, day: u32, label: String) -> PurchaseRecord {
    let mut attributes = BTreeMap::new();
    attributes.insert(TITLE.to_string(), item.title.clone());
    let item_id = sku_id(&item.item_id, &label);
    attributes.insert(SIZE.to_string(), label);
    attributes.insert("brand".to_string(), world.brands[item.brand].name.clone());
    attributes.insert("department".to_string(), item.department.clone());
    attributes.insert("type".to_string(), item.item_type.clone());
    debug_assert!(!attributes.contains_key(CATEGORY));
    PurchaseRecord {
        buyer_id: buyer.buyer_id.clone(),
        item_id,
        day,
        category_path: item.category_path(),
        attributes,
    }
}

/// Posterior over size labels for the example's target, given the hidden
/// personas. The wearer is unknown when several personas shop in the
/// target's department; they are weighted by how likely each is to buy
/// this item.
pub fn bayes_oracle_labels(truth: &GroundTruth, buyer_id: &str, item_id: &str, day: u32) -> Result<BTreeMap<String, f64>> {
    let world = &truth.world;
    let cfg = &world.config;
    let buyer = truth
        .buyer(buyer_id)
        .ok_or_else(|| Error::Precondition(format!("unknown buyer {buyer_id}")))?;
    let item = world
        .item(item_id)
        .ok_or_else(|| Error::Precondition(format!("unknown item {item_id}")))?;
    let dept_size = |d: &str| world.items_in(d).count() as f64;
    let labels = &cfg.chart(&item.chart).expect("validated").labels;
    let mut weights = Vec::new();
    for p in &buyer.personas {
        let w: f64 = p
            .departments(cfg)
            .iter()
            .filter(|(d, _)| *d == item.department)
            .map(|(d, w)| w / dept_size(d))
            .sum();
        if w > 0.0 {
            weights.push((p, w));
        }
    }
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    if total == 0.0 {
        return Err(Error::Precondition(format!("no persona of {buyer_id} buys {item_id}")));
    }
    let mut out = BTreeMap::new();
    for (p, w) in weights {
        for (j, q) in persona_label_distribution(world, p, item, day).expect("covered") {
            *out.entry(labels[j].clone()).or_insert(0.0) += w / total * q;
        }
    }
    Ok(out)
}

/// Oracle distribution in class-id space. Labels missing from the
/// vocabulary (filtered out) are dropped and the rest renormalized.
pub fn bayes_oracle(truth: &GroundTruth, vocab: &SizeVocabulary, example: &TrainingExample) -> Result<SizeDistribution> {
    let labels = bayes_oracle_labels(truth, &example.buyer_id, &example.target_item().item_id, example.target_day())?;
    let mut probs = vec![0.0; vocab.len()];
    for (l, p) in labels {
        if let Some(i) = vocab.id(&l) {
            probs[i] += p;
        }
    }
    let s: f64 = probs.iter().sum();
    if s > 0.0 {
        probs.iter_mut().for_each(|p| *p /= s);
    }
    Ok(SizeDistribution { probs })
}
