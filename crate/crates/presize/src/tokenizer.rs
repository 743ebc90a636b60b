//! Byte-level byte-pair-encoding tokenizer.
//!
//! Ids `0..256` are raw bytes, `256` is `[PAD]`, `257` is `[CLS]`, and every
//! learned merge gets the next id. Merges never cross whitespace, and
//! whitespace bytes are always emitted as single byte tokens, so
//! `decode(encode(s)) == s` for every string.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 256;
pub const CLS_ID: u32 = 257;
pub const N_BASE: usize = 258;
pub const DEFAULT_VOCAB_SIZE: usize = 8000;

const HEADER: &str = "presize-bpe 1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeVocab {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    tokens: Vec<Vec<u8>>,
}

impl Default for BpeVocab {
    /// Byte fallback only.
    fn default() -> Self {
        Self::from_merges(Vec::new()).expect("empty merge list is valid")
    }
}

impl BpeVocab {
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        tokens.push(Vec::new());
        tokens.push(Vec::new());
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, &(a, b)) in merges.iter().enumerate() {
            let next = tokens.len() as u32;
            let valid = |t: u32| t < next && t != PAD_ID && t != CLS_ID;
            if !valid(a) || !valid(b) {
                return Err(Error::Config(format!("merge {rank} references unknown token")));
            }
            let mut joined = tokens[a as usize].clone();
            joined.extend_from_slice(&tokens[b as usize]);
            tokens.push(joined);
            if ranks.insert((a, b), rank as u32).is_some() {
                return Err(Error::Config(format!("merge {rank} is a duplicate")));
            }
        }
        Ok(Self { merges, ranks, tokens })
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    /// Text normalization applied to corpora and attribute values before
    /// encoding.
    pub fn normalize(text: &str) -> String {
        text.to_lowercase()
    }

    /// Encodes `text` byte-for-byte, optionally truncating to `max_len`
    /// tokens. Never emits `[PAD]` or `[CLS]`.
    pub fn encode(&self, text: &str, max_len: Option<usize>) -> Vec<u32> {
        let mut out = Vec::new();
        let mut word_start: Option<usize> = None;
        for (i, ch) in text.char_indices() {
            if ch.is_whitespace() {
                if let Some(s) = word_start.take() {
                    self.encode_word(&text.as_bytes()[s..i], &mut out);
                }
                let mut buf = [0u8; 4];
                out.extend(ch.encode_utf8(&mut buf).bytes().map(u32::from));
            } else if word_start.is_none() {
                word_start = Some(i);
            }
        }
        if let Some(s) = word_start {
            self.encode_word(&text.as_bytes()[s..], &mut out);
        }
        if let Some(m) = max_len {
            out.truncate(m);
        }
        out
    }

    fn encode_word(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut symbols: Vec<u32> = bytes.iter().map(|&b| u32::from(b)).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            symbols = merge_pair(&symbols, pair, N_BASE as u32 + rank);
        }
        out.extend(symbols);
    }

    /// Inverse of [`encode`](Self::encode); `[PAD]` and `[CLS]` are skipped.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            if id == PAD_ID || id == CLS_ID {
                continue;
            }
            let t = self.token_bytes(id).ok_or(Error::TokenIndex {
                id,
                len: self.vocab_size(),
            })?;
            bytes.extend_from_slice(t);
        }
        String::from_utf8(bytes).map_err(|_| Error::Precondition("decoded bytes are not valid UTF-8".into()))
    }

    /// Text form: a versioned header, one merge per line (hex bytes of both
    /// parts), then the special tokens.
    pub fn to_text(&self) -> String {
        let mut s = format!("{HEADER}\n");
        for &(a, b) in &self.merges {
            let _ = writeln!(s, "merge {} {}", hex(&self.tokens[a as usize]), hex(&self.tokens[b as usize]));
        }
        let _ = writeln!(s, "special [PAD] {PAD_ID}");
        let _ = writeln!(s, "special [CLS] {CLS_ID}");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    reason: format!("expected header `{HEADER}`"),
                })
            }
        }
        let mut by_bytes: HashMap<Vec<u8>, u32> = (0..=255u8).map(|b| (vec![b], u32::from(b))).collect();
        let mut merges = Vec::new();
        for (i, line) in lines {
            let parse_err = |reason: &str| Error::Parse {
                line: i + 1,
                reason: reason.to_string(),
            };
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                [] => {}
                ["merge", a, b] => {
                    let a = unhex(a).ok_or_else(|| parse_err("bad hex"))?;
                    let b = unhex(b).ok_or_else(|| parse_err("bad hex"))?;
                    let ia = *by_bytes.get(&a).ok_or_else(|| parse_err("unknown left token"))?;
                    let ib = *by_bytes.get(&b).ok_or_else(|| parse_err("unknown right token"))?;
                    let mut joined = a;
                    joined.extend(b);
                    by_bytes.entry(joined).or_insert((N_BASE + merges.len()) as u32);
                    merges.push((ia, ib));
                }
                ["special", "[PAD]", id] if *id == PAD_ID.to_string() => {}
                ["special", "[CLS]", id] if *id == CLS_ID.to_string() => {}
                _ => return Err(parse_err("unrecognized line")),
            }
        }
        Self::from_merges(merges)
    }
}

fn merge_pair(symbols: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 || s.is_empty() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

/// Learns merges greedily: repeatedly merge the most frequent adjacent pair
/// (ties broken by the pair's byte strings) until `vocab_size` tokens exist
/// or no pair occurs at least twice.
///
/// The corpus is lowercased and split on whitespace; merges never span two
/// words.
pub fn train_bpe<'a>(corpus: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<BpeVocab> {
    if vocab_size < N_BASE {
        return Err(Error::Config(format!(
            "vocab size {vocab_size} is below the {N_BASE} byte and special tokens"
        )));
    }
    let mut word_counts: HashMap<String, u64> = HashMap::new();
    let mut any = false;
    for text in corpus {
        any = true;
        for w in BpeVocab::normalize(text).split_whitespace() {
            *word_counts.entry(w.to_string()).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::Precondition("empty tokenizer corpus".into()));
    }
    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .into_iter()
        .map(|(w, c)| (w.bytes().map(u32::from).collect(), c))
        .collect();
    words.sort();
    let mut tokens: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    tokens.push(Vec::new());
    tokens.push(Vec::new());
    let mut merges = Vec::new();
    while tokens.len() < vocab_size {
        let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
        for (syms, c) in &words {
            for w in syms.windows(2) {
                *pair_counts.entry((w[0], w[1])).or_default() += c;
            }
        }
        let best = pair_counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (&tokens[pa.0 as usize], &tokens[pa.1 as usize]);
                let kb = (&tokens[pb.0 as usize], &tokens[pb.1 as usize]);
                kb.cmp(&ka)
            })
        });
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let new_id = tokens.len() as u32;
        let mut joined = tokens[pair.0 as usize].clone();
        joined.extend_from_slice(&tokens[pair.1 as usize]);
        tokens.push(joined);
        merges.push(pair);
        for (syms, _) in words.iter_mut() {
            if syms.len() > 1 {
                *syms = merge_pair(syms, pair, new_id);
            }
        }
    }
    BpeVocab::from_merges(merges)
}
