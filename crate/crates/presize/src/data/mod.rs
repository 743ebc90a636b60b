//! Items, purchase histories, the size label space and the category tree,
//! plus dataset preparation: normalization, filtering, example construction
//! and the temporal split.

mod dataset;
mod normalize;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{
    build_examples, build_size_vocab, filter_dataset, prepare_histories, read_records, split_temporal,
    write_records, FilterConfig, PurchaseRecord, Split, SplitConfig,
};
pub use normalize::{canonical_text, SizeNormalizer};

pub const TITLE: &str = "title";
pub const CATEGORY: &str = "category";
pub const SIZE: &str = "size";

/// Context attributes kept next to title, category and size.
pub const CONTEXT_ATTRIBUTES: [&str; 11] = [
    "department",
    "brand_type",
    "style",
    "material",
    "type",
    "brand",
    "occasion",
    "manufacture_country",
    "fabric_type",
    "season",
    "gender",
];

/// One attribute name-value pair of an item.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributePair {
    pub name: String,
    pub value: String,
}

/// The closed set of attribute names, each with a dense id.
///
/// `category` is always registered: the category path is serialized as a
/// pseudo-attribute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeRegistry {
    names: Vec<String>,
    size_attributes: Vec<String>,
}

impl Default for AttributeRegistry {
    fn default() -> Self {
        Self::new(vec![SIZE.to_string()], CONTEXT_ATTRIBUTES.iter().map(|s| s.to_string()).collect())
            .expect("default registry is valid")
    }
}

impl AttributeRegistry {
    /// Builds a registry from the size attribute names (all maskable) and
    /// the remaining context attribute names. Title and category are added
    /// first.
    pub fn new(size_attributes: Vec<String>, context: Vec<String>) -> Result<Self> {
        let mut names = vec![TITLE.to_string(), CATEGORY.to_string()];
        for n in size_attributes.iter().chain(&context) {
            if n.is_empty() {
                return Err(Error::Config("empty attribute name".into()));
            }
            if names.contains(n) {
                return Err(Error::Config(format!("attribute `{n}` registered twice")));
            }
            names.push(n.clone());
        }
        if size_attributes.is_empty() {
            return Err(Error::Config("at least one size attribute is required".into()));
        }
        Ok(Self { names, size_attributes })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn size_attributes(&self) -> &[String] {
        &self.size_attributes
    }

    pub fn is_size_attribute(&self, name: &str) -> bool {
        self.size_attributes.iter().any(|n| n == name)
    }

    /// The general size attribute whose value is the prediction label.
    pub fn label_attribute(&self) -> &str {
        &self.size_attributes[0]
    }

    /// Context attribute names: everything except title, category and sizes.
    pub fn context_attributes(&self) -> impl Iterator<Item = &str> {
        self.names[2..]
            .iter()
            .filter(|n| !self.is_size_attribute(n))
            .map(String::as_str)
    }
}

/// An item: a category path plus attribute name-value pairs.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    /// Root to leaf.
    pub category_path: Vec<String>,
    pub attributes: BTreeMap<String, String>,
}

impl Item {
    pub fn new(
        item_id: impl Into<String>,
        category_path: Vec<String>,
        attributes: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let item_id = item_id.into();
        let mut map = BTreeMap::new();
        for (k, v) in attributes {
            if k.is_empty() {
                return Err(Error::InvalidItem {
                    id: item_id,
                    reason: "empty attribute name".into(),
                });
            }
            if map.insert(k.clone(), v).is_some() {
                return Err(Error::InvalidItem {
                    id: item_id,
                    reason: format!("attribute `{k}` given twice"),
                });
            }
        }
        let item = Self {
            item_id,
            category_path,
            attributes: map,
        };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: &str| Error::InvalidItem {
            id: self.item_id.clone(),
            reason: reason.to_string(),
        };
        if self.category_path.is_empty() || self.category_path.iter().any(String::is_empty) {
            return Err(fail("category path must be non-empty"));
        }
        if !self.attributes.contains_key(TITLE) {
            return Err(fail("missing title"));
        }
        Ok(())
    }

    pub fn attribute(&self, name: &str) -> Option<&str> {
        self.attributes.get(name).map(String::as_str)
    }

    pub fn title(&self) -> &str {
        self.attribute(TITLE).unwrap_or_default()
    }

    /// Leaf path joined as `a:b:c`.
    pub fn category_string(&self) -> String {
        self.category_path.join(":")
    }

    pub fn attribute_pairs(&self) -> impl Iterator<Item = AttributePair> + '_ {
        self.attributes.iter().map(|(n, v)| AttributePair {
            name: n.clone(),
            value: v.clone(),
        })
    }
}

/// A purchase of `item` on day `purchase_day` in size `size_label`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Purchase {
    pub item: Arc<Item>,
    pub purchase_day: u32,
    pub size_label: String,
}

/// A buyer's purchases in ascending `(day, item_id)` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurchaseHistory {
    pub buyer_id: String,
    pub purchases: Vec<Purchase>,
}

impl PurchaseHistory {
    pub fn new(buyer_id: impl Into<String>, mut purchases: Vec<Purchase>) -> Self {
        sort_purchases(&mut purchases);
        Self {
            buyer_id: buyer_id.into(),
            purchases,
        }
    }

    pub fn is_sorted(&self) -> bool {
        self.purchases
            .windows(2)
            .all(|w| purchase_key(&w[0]) <= purchase_key(&w[1]))
    }
}

fn purchase_key(p: &Purchase) -> (u32, &str) {
    (p.purchase_day, p.item.item_id.as_str())
}

/// Stable sort by day, ties by item id.
pub fn sort_purchases(purchases: &mut [Purchase]) {
    purchases.sort_by(|a, b| purchase_key(a).cmp(&purchase_key(b)));
}

/// Dense bijection between size labels and class ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeVocabulary {
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl SizeVocabulary {
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate size label `{l}`")));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        if self.index.len() != self.labels.len() {
            // Deserialized without the index.
            return self.labels.iter().position(|l| l == label);
        }
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Restores the lookup index after deserialization.
    pub fn reindex(self) -> Result<Self> {
        Self::from_labels(self.labels)
    }
}

/// Category tree keyed by path prefix, with per-node payload `S`.
///
/// Inserting a path creates every prefix, so ancestors always exist. The
/// empty prefix is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryTree<S> {
    nodes: BTreeMap<Vec<String>, S>,
}

impl<S: Default> Default for CategoryTree<S> {
    fn default() -> Self {
        let mut nodes = BTreeMap::new();
        nodes.insert(Vec::new(), S::default());
        Self { nodes }
    }
}

impl<S: Default> CategoryTree<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_path(&mut self, path: &[String]) {
        for k in 1..=path.len() {
            self.nodes.entry(path[..k].to_vec()).or_default();
        }
    }

    pub fn contains(&self, prefix: &[String]) -> bool {
        self.nodes.contains_key(prefix)
    }

    pub fn node(&self, prefix: &[String]) -> Option<&S> {
        self.nodes.get(prefix)
    }

    pub fn node_mut(&mut self, prefix: &[String]) -> Option<&mut S> {
        self.nodes.get_mut(prefix)
    }

    /// A node is a leaf when no stored path extends it.
    pub fn is_leaf(&self, prefix: &[String]) -> bool {
        self.contains(prefix)
            && !self
                .nodes
                .range(prefix.to_vec()..)
                .nth(1)
                .is_some_and(|(k, _)| k.len() > prefix.len() && k.starts_with(prefix))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&Vec<String>, &S)> {
        self.nodes.iter()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }
}

/// Prefixes of `path` from the full path up to length 1 (leaf to root,
/// excluding the empty root prefix).
pub fn ancestors(path: &[String]) -> impl Iterator<Item = &[String]> {
    (1..=path.len()).rev().map(move |k| &path[..k])
}

/// One prediction instance: predict the size of `target` given the buyer's
/// earlier purchases.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub buyer_id: String,
    /// Most recent purchases strictly before the target, oldest first.
    pub history: Vec<Purchase>,
    pub target: Purchase,
    pub label_id: usize,
}

impl TrainingExample {
    pub fn target_item(&self) -> &Item {
        &self.target.item
    }

    pub fn target_day(&self) -> u32 {
        self.target.purchase_day
    }
}
