use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_SYNONYMS: &str = include_str!("../../config/size_synonyms.txt");
const DEFAULT_STOPLIST: &str = include_str!("../../config/size_stoplist.txt");

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn canonical_text(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Maps raw size strings to canonical labels, or drops them when they carry
/// no size information.
#[derive(Clone, Debug)]
pub struct SizeNormalizer {
    synonyms: HashMap<String, String>,
    stoplist: HashSet<String>,
}

impl Default for SizeNormalizer {
    fn default() -> Self {
        Self::parse(DEFAULT_SYNONYMS, DEFAULT_STOPLIST).expect("bundled size tables are valid")
    }
}

impl SizeNormalizer {
    /// Parses a synonym table (`canonical: variant, variant` lines) and a
    /// stoplist (one string per line). `#` starts a comment line.
    pub fn parse(synonyms: &str, stoplist: &str) -> Result<Self> {
        let stop: HashSet<String> = content_lines(stoplist).map(|(_, l)| canonical_text(l)).collect();
        let mut map = HashMap::new();
        let mut canonicals = HashSet::new();
        for (line_no, line) in content_lines(synonyms) {
            let (canon, variants) = line.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                reason: "expected `canonical: variant, ...`".into(),
            })?;
            let canon = canonical_text(canon);
            if canon.is_empty() || stop.contains(&canon) {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("invalid canonical label `{canon}`"),
                });
            }
            canonicals.insert(canon.clone());
            for v in variants.split(',') {
                let v = canonical_text(v);
                if v.is_empty() || v == canon {
                    continue;
                }
                if let Some(prev) = map.insert(v.clone(), canon.clone()) {
                    if prev != canon {
                        return Err(Error::Parse {
                            line: line_no,
                            reason: format!("`{v}` maps to both `{prev}` and `{canon}`"),
                        });
                    }
                }
            }
        }
        // Canonical forms must be fixed points, otherwise normalization is
        // not idempotent.
        if let Some(c) = canonicals.iter().find(|c| map.contains_key(*c)) {
            return Err(Error::Parse {
                line: 0,
                reason: format!("canonical label `{c}` is also listed as a variant"),
            });
        }
        Ok(Self {
            synonyms: map,
            stoplist: stop,
        })
    }

    pub fn from_files(synonyms: &Path, stoplist: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(synonyms)?, &std::fs::read_to_string(stoplist)?)
    }

    pub fn normalize(&self, raw: &str) -> Option<String> {
        let text = canonical_text(raw);
        if text.is_empty() || self.stoplist.contains(&text) {
            return None;
        }
        Some(self.synonyms.get(&text).cloned().unwrap_or(text))
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn abbreviations_merge() {
        let n = SizeNormalizer::default();
        assert_eq!(n.normalize("XXL").as_deref(), Some("2xl"));
        assert_eq!(n.normalize("extra  extra LARGE").as_deref(), Some("2xl"));
        assert_eq!(n.normalize("2xl").as_deref(), Some("2xl"));
        assert_eq!(n.normalize("Extra Large").as_deref(), Some("xl"));
    }

    #[test]
    fn uninformative_strings_dropped() {
        let n = SizeNormalizer::default();
        assert_eq!(n.normalize("One Size"), None);
        assert_eq!(n.normalize("fits all"), None);
        assert_eq!(n.normalize("Not Applicable"), None);
        assert_eq!(n.normalize("   "), None);
    }

    #[test]
    fn canonical_passes_through() {
        let n = SizeNormalizer::default();
        assert_eq!(n.normalize("m").as_deref(), Some("m"));
        assert_eq!(n.normalize(" 10.5 ").as_deref(), Some("10.5"));
    }

    #[test]
    fn conflicting_tables_rejected() {
        assert!(SizeNormalizer::parse("a: x\nb: x\n", "").is_err());
        assert!(SizeNormalizer::parse("a: b\nb: c\n", "").is_err());
        assert!(SizeNormalizer::parse("no colon here", "").is_err());
    }

    #[test]
    fn idempotent_on_bundled_tables() {
        let n = SizeNormalizer::default();
        for raw in ["XXL", "x-large", "Medium", "32", "l-large", "ONE SIZE", "3X", "w 32 l 30"] {
            let once = n.normalize(raw);
            let twice = once.as_deref().and_then(|s| n.normalize(s));
            assert_eq!(once, twice, "{raw}");
        }
    }
}
