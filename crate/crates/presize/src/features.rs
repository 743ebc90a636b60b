//! Ranking features derived from a size distribution, and the offline item
//! embedding cache.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::Item;
use crate::error::{Error, Result};
use crate::model::{SizeDistribution, SizeModel, TemporalReference};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeFeatures {
    /// Probability mass on the available sizes.
    pub total_score: f64,
    /// Probability of the most likely available size.
    pub best_score: f64,
    /// 1-based rank of that size among all sizes.
    pub best_rank: usize,
}

/// Features of `dist` restricted to the `available` class ids.
pub fn size_features(dist: &SizeDistribution, available: &[usize]) -> Result<SizeFeatures> {
    let n = dist.probs.len();
    let set: BTreeSet<usize> = available.iter().copied().collect();
    if set.is_empty() {
        return Err(Error::Precondition("no available sizes".into()));
    }
    if let Some(&bad) = set.iter().find(|&&s| s >= n) {
        return Err(Error::UnknownLabel(format!("class {bad} of {n}")));
    }
    let p = &dist.probs;
    let total_score = set.iter().map(|&s| p[s]).sum();
    let mut best = *set.iter().next().expect("non-empty");
    for &s in &set {
        if p[s] > p[best] {
            best = s;
        }
    }
    let best_rank = 1 + p.iter().filter(|&&q| q > p[best]).count();
    Ok(SizeFeatures {
        total_score,
        best_score: p[best],
        best_rank,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub buyer_id: String,
    pub item_id: String,
    pub total_score: f64,
    pub best_score: f64,
    pub best_rank: usize,
}

pub fn write_feature_records<W: Write>(mut w: W, records: &[FeatureRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_feature_records<R: BufRead>(r: R) -> Result<Vec<FeatureRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

const CACHE_MAGIC: &[u8; 8] = b"PRSZEMBC";
const CACHE_VERSION: u32 = 2;

/// Unmasked item embeddings tied to the checkpoint that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemEmbeddingCache {
    pub fingerprint: String,
    pub dim: usize,
    /// Settings of the run that produced the checkpoint, copied from it.
    pub run_config: Option<serde_json::Value>,
    entries: BTreeMap<String, Vec<f32>>,
}

impl ItemEmbeddingCache {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, item_id: &str) -> Option<&[f32]> {
        self.entries.get(item_id).map(|v| v.as_slice())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    /// Layout: magic, version, fingerprint and run config JSON (both
    /// length-prefixed), `d`, count,
    /// then `(id, d floats)` records in id order. Integers and floats are
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.entries.len() * (16 + 4 * self.dim));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.fingerprint.len() as u32).to_le_bytes());
        out.extend_from_slice(self.fingerprint.as_bytes());
        let cfg = serde_json::to_vec(&self.run_config).expect("json value serializes");
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (id, v) in &self.entries {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CACHE_MAGIC {
            return Err(Error::Checkpoint("not an embedding cache".into()));
        }
        let version = r.u32()?;
        if version != CACHE_VERSION {
            return Err(Error::Checkpoint(format!("unsupported cache version {version}")));
        }
        let flen = r.u32()? as usize;
        let fingerprint = r.string(flen)?;
        let clen = r.u32()? as usize;
        let run_config =
            serde_json::from_slice(r.take(clen)?).map_err(|e| Error::Checkpoint(format!("cache run config: {e}")))?;
        let dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let l = r.u32()? as usize;
            let id = r.string(l)?;
            let v = r
                .take(4 * dim)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.insert(id, v);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes in embedding cache".into()));
        }
        Ok(Self {
            fingerprint,
            dim,
            run_config,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated embedding cache".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize) -> Result<String> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

/// Embeds every distinct item (unmasked) with `model`.
pub fn build_embedding_cache<'a>(
    items: impl IntoIterator<Item = &'a Item>,
    model: &SizeModel,
) -> Result<ItemEmbeddingCache> {
    let mut unique: BTreeMap<&str, &Item> = BTreeMap::new();
    for it in items {
        unique.entry(it.item_id.as_str()).or_insert(it);
    }
    let tokens = unique
        .values()
        .map(|it| model.item_tokens(it, false))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = tokens.iter().collect();
    let emb = model.item_embeddings(&refs)?;
    let entries = unique
        .keys()
        .enumerate()
        .map(|(i, id)| (id.to_string(), emb.row(i).to_vec()))
        .collect();
    Ok(ItemEmbeddingCache {
        fingerprint: model.fingerprint()?,
        dim: model.config.dim,
        run_config: model.run_config.clone(),
        entries,
    })
}

/// Online assembly over a cache: history embeddings come from the cache,
/// buyer and context embeddings are computed on the fly.
pub struct CachedPredictor<'a> {
    model: &'a SizeModel,
    cache: &'a ItemEmbeddingCache,
}

impl<'a> CachedPredictor<'a> {
    /// Rejects a cache produced by a different checkpoint.
    pub fn new(model: &'a SizeModel, cache: &'a ItemEmbeddingCache) -> Result<Self> {
        let fp = model.fingerprint()?;
        if cache.fingerprint != fp || cache.dim != model.config.dim {
            return Err(Error::Checkpoint(format!(
                "embedding cache was built for checkpoint {} but the model is {fp}",
                cache.fingerprint
            )));
        }
        Ok(Self { model, cache })
    }

    pub fn predict_from_cache(
        &self,
        history: &[(&str, u32)],
        target: &Item,
        target_day: u32,
        reference: TemporalReference,
    ) -> Result<SizeDistribution> {
        if history.is_empty() {
            return Err(Error::Precondition("empty purchase history".into()));
        }
        let rows = history
            .iter()
            .map(|&(id, day)| {
                self.cache
                    .get(id)
                    .map(|e| (e, day))
                    .ok_or_else(|| Error::CacheMiss(id.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let context = self.model.embed_item(target, true)?;
        self.model
            .predict_from_embeddings(&rows, &context, target_day, reference)
    }
}
