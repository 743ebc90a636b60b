//! Classification metrics and slice reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{canonical_text, Item, TrainingExample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    pub predicted: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Micro and macro precision, recall and F1. Classes absent from the truth
/// are left out of macro averages.
pub fn compute_metrics(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<Metrics> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::Precondition(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut tp = vec![0usize; n_classes];
    let mut support = vec![0usize; n_classes];
    let mut predicted = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::UnknownLabel(format!("class {} of {n_classes}", p.max(t))));
        }
        support[t] += 1;
        predicted[p] += 1;
        if p == t {
            tp[t] += 1;
        }
    }
    let n = pred.len();
    let correct: usize = tp.iter().sum();
    let micro = correct as f64 / n as f64;
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let per_class: Vec<ClassMetrics> = (0..n_classes)
        .map(|c| {
            let precision = ratio(tp[c], predicted[c]);
            let recall = ratio(tp[c], support[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: support[c],
                predicted: predicted[c],
            }
        })
        .collect();
    let present: Vec<&ClassMetrics> = per_class.iter().filter(|c| c.support > 0).collect();
    let k = present.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| present.iter().map(|c| f(c)).sum::<f64>() / k;
    Ok(Metrics {
        n,
        micro_precision: micro,
        micro_recall: micro,
        micro_f1: micro,
        macro_precision: mean(|c| c.precision),
        macro_recall: mean(|c| c.recall),
        macro_f1: mean(|c| c.f1),
        per_class,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Department {
    Mens,
    Womens,
    Unisex,
    Kids,
}

impl Department {
    pub fn label(self) -> &'static str {
        match self {
            Department::Mens => "Men's",
            Department::Womens => "Women's",
            Department::Unisex => "Unisex",
            Department::Kids => "Kid's",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ItemType {
    Tops,
    Bottoms,
    DressSkirt,
    Footwear,
    Other,
}

impl ItemType {
    pub fn label(self) -> &'static str {
        match self {
            ItemType::Tops => "Tops",
            ItemType::Bottoms => "Bottoms",
            ItemType::DressSkirt => "Dress/Skirt",
            ItemType::Footwear => "Footwear",
            ItemType::Other => "Other",
        }
    }
}

/// Maps category paths to departments and item types by looking up one
/// path level each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Taxonomy {
    pub department_level: usize,
    pub item_type_level: usize,
    pub departments: BTreeMap<String, Department>,
    pub item_types: BTreeMap<String, ItemType>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        let departments = [
            ("men", Department::Mens),
            ("mens", Department::Mens),
            ("men's", Department::Mens),
            ("women", Department::Womens),
            ("womens", Department::Womens),
            ("women's", Department::Womens),
            ("unisex", Department::Unisex),
            ("kids", Department::Kids),
            ("kid's", Department::Kids),
            ("children", Department::Kids),
        ];
        let item_types = [
            ("tops", ItemType::Tops),
            ("bottoms", ItemType::Bottoms),
            ("dresses", ItemType::DressSkirt),
            ("dress-skirt", ItemType::DressSkirt),
            ("skirts", ItemType::DressSkirt),
            ("footwear", ItemType::Footwear),
            ("shoes", ItemType::Footwear),
        ];
        Self {
            department_level: 0,
            item_type_level: 1,
            departments: departments.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            item_types: item_types.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

impl Taxonomy {
    pub fn department(&self, item: &Item) -> Option<Department> {
        let seg = item.category_path.get(self.department_level)?;
        self.departments.get(&canonical_text(seg)).copied()
    }

    /// Unmapped paths are `Other`.
    pub fn item_type(&self, item: &Item) -> ItemType {
        item.category_path
            .get(self.item_type_level)
            .and_then(|s| self.item_types.get(&canonical_text(s)))
            .copied()
            .unwrap_or(ItemType::Other)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GenderType {
    MenOnly,
    WomenOnly,
    Mixed,
    Undetermined,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeType {
    AdultOnly,
    KidsOnly,
    Mixed,
    Undetermined,
}

/// Account type from the departments a buyer has purchased from. Unisex
/// purchases count as adult but toward neither gender.
pub fn classify_account<'a>(items: impl IntoIterator<Item = &'a Item>, taxonomy: &Taxonomy) -> (GenderType, AgeType) {
    let (mut men, mut women, mut adult, mut kids) = (false, false, false, false);
    for it in items {
        match taxonomy.department(it) {
            Some(Department::Mens) => {
                men = true;
                adult = true;
            }
            Some(Department::Womens) => {
                women = true;
                adult = true;
            }
            Some(Department::Unisex) => adult = true,
            Some(Department::Kids) => kids = true,
            None => {}
        }
    }
    let gender = match (men, women) {
        (true, true) => GenderType::Mixed,
        (true, false) => GenderType::MenOnly,
        (false, true) => GenderType::WomenOnly,
        (false, false) => GenderType::Undetermined,
    };
    let age = match (adult, kids) {
        (true, true) => AgeType::Mixed,
        (true, false) => AgeType::AdultOnly,
        (false, true) => AgeType::KidsOnly,
        (false, false) => AgeType::Undetermined,
    };
    (gender, age)
}

impl GenderType {
    pub fn label(self) -> &'static str {
        match self {
            GenderType::MenOnly => "Men Only",
            GenderType::WomenOnly => "Women Only",
            GenderType::Mixed => "Mixed Gender",
            GenderType::Undetermined => "Undetermined",
        }
    }
}

impl AgeType {
    pub fn label(self) -> &'static str {
        match self {
            AgeType::AdultOnly => "Adults Only",
            AgeType::KidsOnly => "Kids Only",
            AgeType::Mixed => "Mixed Age Group",
            AgeType::Undetermined => "Undetermined",
        }
    }
}

/// Default history-length bucket lower bounds.
pub const HISTORY_BUCKETS: [usize; 9] = [1, 2, 3, 4, 5, 10, 15, 20, 25];

pub fn history_bucket(len: usize, edges: &[usize]) -> String {
    let i = edges.iter().rposition(|&e| len >= e).unwrap_or(0);
    let lo = edges[i];
    match edges.get(i + 1) {
        Some(&hi) if hi == lo + 1 => lo.to_string(),
        Some(&hi) => format!("{lo}-{}", hi - 1),
        None => format!("{lo}+"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub axis: String,
    pub value: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub overall: Metrics,
    pub slices: Vec<SliceReport>,
    pub notes: Vec<String>,
}

impl EvalReport {
    pub fn slice(&self, axis: &str, value: &str) -> Option<&Metrics> {
        self.slices
            .iter()
            .find(|s| s.axis == axis && s.value == value)
            .map(|s| &s.metrics)
    }

    /// Aligned human-readable table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.name);
        let _ = writeln!(
            s,
            "{:<18} {:<16} {:>7} {:>8} {:>8} {:>8} {:>8}",
            "axis", "slice", "n", "micro P", "macro P", "macro R", "macro F1"
        );
        let row = |s: &mut String, axis: &str, value: &str, m: &Metrics| {
            let _ = writeln!(
                s,
                "{:<18} {:<16} {:>7} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                axis, value, m.n, m.micro_precision, m.macro_precision, m.macro_recall, m.macro_f1
            );
        };
        row(&mut s, "all", "all", &self.overall);
        for sl in &self.slices {
            row(&mut s, &sl.axis, &sl.value, &sl.metrics);
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }
}

/// Overall metrics plus department, item-type, novelty, account-type and
/// history-length slices. Empty slices are omitted with a note.
pub fn slice_evaluate(
    name: &str,
    examples: &[TrainingExample],
    preds: &[usize],
    n_classes: usize,
    taxonomy: &Taxonomy,
) -> Result<EvalReport> {
    if examples.len() != preds.len() {
        return Err(Error::Precondition(format!(
            "{} predictions for {} examples",
            preds.len(),
            examples.len()
        )));
    }
    let truth: Vec<usize> = examples.iter().map(|e| e.label_id).collect();
    let overall = compute_metrics(preds, &truth, n_classes)?;
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    let mut keyed: BTreeMap<(usize, String), Vec<usize>> = BTreeMap::new();
    let mut add = |axis: &str, order: &[String], value: Option<String>, i: usize| {
        let ai = match groups.iter().position(|(a, _)| a == axis) {
            Some(k) => k,
            None => {
                groups.push((axis.to_string(), order.to_vec()));
                groups.len() - 1
            }
        };
        if let Some(v) = value {
            keyed.entry((ai, v)).or_default().push(i);
        }
    };
    let dept_order: Vec<String> = [Department::Mens, Department::Womens, Department::Unisex, Department::Kids]
        .iter()
        .map(|d| d.label().to_string())
        .collect();
    let type_order: Vec<String> = [
        ItemType::Tops,
        ItemType::Bottoms,
        ItemType::DressSkirt,
        ItemType::Footwear,
        ItemType::Other,
    ]
    .iter()
    .map(|t| t.label().to_string())
    .collect();
    let novelty: Vec<String> = vec!["Novel".into(), "Observed".into()];
    let genders: Vec<String> = [
        GenderType::MenOnly,
        GenderType::WomenOnly,
        GenderType::Mixed,
        GenderType::Undetermined,
    ]
    .iter()
    .map(|g| g.label().to_string())
    .collect();
    let ages: Vec<String> = [AgeType::AdultOnly, AgeType::KidsOnly, AgeType::Mixed, AgeType::Undetermined]
        .iter()
        .map(|a| a.label().to_string())
        .collect();
    let buckets: Vec<String> = HISTORY_BUCKETS
        .iter()
        .map(|&e| history_bucket(e, &HISTORY_BUCKETS))
        .collect();
    for (i, e) in examples.iter().enumerate() {
        let target = e.target_item();
        let dept = taxonomy.department(target);
        let ty = taxonomy.item_type(target);
        add("department", &dept_order, dept.map(|d| d.label().to_string()), i);
        add("item_type", &type_order, Some(ty.label().to_string()), i);
        let dept_novel = dept.map(|d| !e.history.iter().any(|p| taxonomy.department(&p.item) == Some(d)));
        add(
            "department_novelty",
            &novelty,
            dept_novel.map(|n| if n { "Novel" } else { "Observed" }.to_string()),
            i,
        );
        let type_novel = !e.history.iter().any(|p| taxonomy.item_type(&p.item) == ty);
        add(
            "item_type_novelty",
            &novelty,
            Some(if type_novel { "Novel" } else { "Observed" }.to_string()),
            i,
        );
        let (g, a) = classify_account(e.history.iter().map(|p| p.item.as_ref()), taxonomy);
        add("account_gender", &genders, Some(g.label().to_string()), i);
        add("account_age", &ages, Some(a.label().to_string()), i);
        add(
            "history_length",
            &buckets,
            Some(history_bucket(e.history.len(), &HISTORY_BUCKETS)),
            i,
        );
    }
    let mut slices = Vec::new();
    let mut notes = Vec::new();
    for (ai, (axis, order)) in groups.iter().enumerate() {
        for value in order {
            match keyed.get(&(ai, value.clone())) {
                Some(idx) => {
                    let p: Vec<usize> = idx.iter().map(|&i| preds[i]).collect();
                    let t: Vec<usize> = idx.iter().map(|&i| truth[i]).collect();
                    slices.push(SliceReport {
                        axis: axis.clone(),
                        value: value.clone(),
                        metrics: compute_metrics(&p, &t, n_classes)?,
                    });
                }
                None => notes.push(format!("{axis}/{value}: no examples")),
            }
        }
    }
    Ok(EvalReport {
        name: name.to_string(),
        overall,
        slices,
        notes,
    })
}
