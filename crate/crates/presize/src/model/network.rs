use presize_nn::layers::{GeluCache, LinearCache};
use presize_nn::transformer::TransformerStackCache;
use presize_nn::{gelu, gelu_backward, Scalar, Tensor};

use super::{ItemTokens, ModelConfig, ModelParams};
use crate::error::{Error, Result};

/// Temporal id of a purchase made `reference_day - purchase_day` days before
/// the reference: `floor(log2(delta + 1))`, clamped to the table size.
pub fn temporal_id(purchase_day: u32, reference_day: u32, n_ids: usize) -> Result<u32> {
    if purchase_day > reference_day {
        return Err(Error::Precondition(format!(
            "purchase day {purchase_day} is after reference day {reference_day}"
        )));
    }
    let delta = (reference_day - purchase_day) as u64;
    let id = (delta + 1).ilog2();
    Ok(id.min(n_ids.saturating_sub(1) as u32))
}

/// Day that anchors temporal ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TemporalReference {
    /// Day of the most recent history purchase.
    #[default]
    LastHistory,
    /// Day of the purchase being predicted.
    Query,
}

impl TemporalReference {
    pub fn reference_day(self, history_days: &[u32], target_day: u32) -> u32 {
        match self {
            TemporalReference::LastHistory => history_days.iter().copied().max().unwrap_or(target_day),
            TemporalReference::Query => target_day,
        }
    }
}

/// History of one example as rows of the item batch, oldest first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HistorySlots {
    pub items: Vec<usize>,
    pub temporal_ids: Vec<u32>,
}

/// A deduplicated batch: every distinct item sequence appears once in
/// `items`; histories and contexts point into it.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    pub items: Vec<&'a ItemTokens>,
    pub histories: Vec<HistorySlots>,
    pub contexts: Vec<usize>,
}

pub struct ItemEncodeCache<T> {
    items: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)>,
    len: usize,
    stack: TransformerStackCache<T>,
}

fn check_id(id: usize, len: usize) -> Result<usize> {
    if id < len {
        Ok(id)
    } else {
        Err(Error::TokenIndex { id: id as u32, len })
    }
}

fn add_row<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// Encodes items to their `[CLS]` outputs, `[N, d]`.
///
/// The sequence axis is trimmed to the longest valid prefix in the batch;
/// every row depends only on its own item.
pub fn encode_items<T: Scalar>(
    p: &ModelParams<T>,
    cfg: &ModelConfig,
    items: &[&ItemTokens],
) -> Result<(Tensor<T>, ItemEncodeCache<T>)> {
    let d = cfg.dim;
    let n = items.len();
    let len = 1 + items.iter().map(|t| t.n_valid()).max().unwrap_or(0);
    let mut x = Tensor::zeros(&[n, len, d]);
    let mut mask = vec![false; n * len];
    let mut ids = Vec::with_capacity(n);
    for (i, it) in items.iter().enumerate() {
        let base = i * len;
        x.row_mut(base).copy_from_slice(p.item_cls.data());
        mask[base] = true;
        let k = it.n_valid();
        let mut tok = Vec::with_capacity(k);
        let mut pos = Vec::with_capacity(k);
        let mut att = Vec::with_capacity(k);
        for t in 0..k {
            let a = check_id(it.token_ids[t] as usize, cfg.vocab_size)?;
            let b = check_id(it.pos_ids[t] as usize, cfg.n_positions)?;
            let c = check_id(it.attr_ids[t] as usize, cfg.n_attr_names())?;
            let row = x.row_mut(base + 1 + t);
            row.copy_from_slice(p.token_embedding.table.row(a));
            add_row(row, p.position_embedding.table.row(b));
            add_row(row, p.attribute_embedding.table.row(c));
            mask[base + 1 + t] = true;
            tok.push(a);
            pos.push(b);
            att.push(c);
        }
        ids.push((tok, pos, att));
    }
    let (y, stack) = p.item_encoder.forward(&x, &mask)?;
    let mut out = Tensor::zeros(&[n, d]);
    for i in 0..n {
        out.row_mut(i).copy_from_slice(y.row(i * len));
    }
    Ok((out, ItemEncodeCache { items: ids, len, stack }))
}

pub fn encode_items_backward<T: Scalar>(
    p: &ModelParams<T>,
    cache: ItemEncodeCache<T>,
    d_out: &Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Result<()> {
    let n = cache.items.len();
    let len = cache.len;
    let d = p.item_cls.len();
    let mut dy = Tensor::zeros(&[n, len, d]);
    for i in 0..n {
        dy.row_mut(i * len).copy_from_slice(d_out.row(i));
    }
    let dx = p.item_encoder.backward(cache.stack, &dy, &mut grads.item_encoder)?;
    for (i, (tok, pos, att)) in cache.items.iter().enumerate() {
        let base = i * len;
        add_row(grads.item_cls.data_mut(), dx.row(base));
        for t in 0..tok.len() {
            let g = dx.row(base + 1 + t);
            add_row(grads.token_embedding.table.row_mut(tok[t]), g);
            add_row(grads.position_embedding.table.row_mut(pos[t]), g);
            add_row(grads.attribute_embedding.table.row_mut(att[t]), g);
        }
    }
    Ok(())
}

pub struct HistoryEncodeCache<T> {
    slots: Vec<HistorySlots>,
    len: usize,
    n_items: usize,
    stack: TransformerStackCache<T>,
}

/// Encodes purchase histories to buyer embeddings, `[B, d]`, from the item
/// embeddings `[N, d]` the slots refer to.
pub fn encode_histories<T: Scalar>(
    p: &ModelParams<T>,
    cfg: &ModelConfig,
    item_emb: &Tensor<T>,
    slots: &[HistorySlots],
) -> Result<(Tensor<T>, HistoryEncodeCache<T>)> {
    let d = cfg.dim;
    let b = slots.len();
    let n_items = item_emb.rows();
    let mut longest = 0;
    for s in slots {
        if s.items.is_empty() || s.items.len() > cfg.history_len || s.items.len() != s.temporal_ids.len() {
            return Err(Error::Precondition(format!(
                "history of {} items with {} temporal ids; expected 1..={} of each",
                s.items.len(),
                s.temporal_ids.len(),
                cfg.history_len
            )));
        }
        longest = longest.max(s.items.len());
    }
    let len = 1 + longest;
    let mut x = Tensor::zeros(&[b, len, d]);
    let mut mask = vec![false; b * len];
    for (i, s) in slots.iter().enumerate() {
        let base = i * len;
        x.row_mut(base).copy_from_slice(p.history_cls.data());
        mask[base] = true;
        for (j, (&item, &tid)) in s.items.iter().zip(&s.temporal_ids).enumerate() {
            let item = check_id(item, n_items)?;
            let tid = check_id(tid as usize, cfg.n_temporal_ids)?;
            let row = x.row_mut(base + 1 + j);
            row.copy_from_slice(item_emb.row(item));
            if cfg.use_temporal {
                add_row(row, p.temporal_embedding.table.row(tid));
            }
            mask[base + 1 + j] = true;
        }
    }
    let (y, stack) = p.history_encoder.forward(&x, &mask)?;
    let mut out = Tensor::zeros(&[b, d]);
    for i in 0..b {
        out.row_mut(i).copy_from_slice(y.row(i * len));
    }
    Ok((
        out,
        HistoryEncodeCache {
            slots: slots.to_vec(),
            len,
            n_items,
            stack,
        },
    ))
}

/// Returns the gradient with respect to the item embeddings, `[N, d]`.
pub fn encode_histories_backward<T: Scalar>(
    p: &ModelParams<T>,
    cfg: &ModelConfig,
    cache: HistoryEncodeCache<T>,
    d_out: &Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Result<Tensor<T>> {
    let d = cfg.dim;
    let b = cache.slots.len();
    let len = cache.len;
    let mut dy = Tensor::zeros(&[b, len, d]);
    for i in 0..b {
        dy.row_mut(i * len).copy_from_slice(d_out.row(i));
    }
    let dx = p.history_encoder.backward(cache.stack, &dy, &mut grads.history_encoder)?;
    let mut d_items = Tensor::zeros(&[cache.n_items, d]);
    for (i, s) in cache.slots.iter().enumerate() {
        let base = i * len;
        add_row(grads.history_cls.data_mut(), dx.row(base));
        for (j, (&item, &tid)) in s.items.iter().zip(&s.temporal_ids).enumerate() {
            let g = dx.row(base + 1 + j);
            add_row(d_items.row_mut(item), g);
            if cfg.use_temporal {
                add_row(grads.temporal_embedding.table.row_mut(tid as usize), g);
            }
        }
    }
    Ok(d_items)
}

pub struct ClassifierCache<T> {
    l1: LinearCache<T>,
    a1: GeluCache<T>,
    l2: LinearCache<T>,
    a2: GeluCache<T>,
    l3: LinearCache<T>,
}

/// Logits `[B, n_classes]` from buyer and context embeddings, both `[B, d]`.
pub fn classify<T: Scalar>(
    p: &ModelParams<T>,
    buyer: &Tensor<T>,
    context: &Tensor<T>,
) -> Result<(Tensor<T>, ClassifierCache<T>)> {
    let b = buyer.rows();
    let d = buyer.cols();
    let mut h = Tensor::zeros(&[b, 2 * d]);
    for i in 0..b {
        let row = h.row_mut(i);
        row[..d].copy_from_slice(buyer.row(i));
        row[d..].copy_from_slice(context.row(i));
    }
    let c = &p.classifier;
    let (z1, l1) = c.hidden1.forward(&h)?;
    let (g1, a1) = gelu(&z1);
    let (z2, l2) = c.hidden2.forward(&g1)?;
    let (g2, a2) = gelu(&z2);
    let (logits, l3) = c.output.forward(&g2)?;
    Ok((logits, ClassifierCache { l1, a1, l2, a2, l3 }))
}

/// Returns gradients for the buyer and context embeddings.
pub fn classify_backward<T: Scalar>(
    p: &ModelParams<T>,
    cache: ClassifierCache<T>,
    d_logits: &Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = &p.classifier;
    let g = &mut grads.classifier;
    let dg2 = c.output.backward(cache.l3, d_logits, &mut g.output)?;
    let dz2 = gelu_backward(cache.a2, &dg2)?;
    let dg1 = c.hidden2.backward(cache.l2, &dz2, &mut g.hidden2)?;
    let dz1 = gelu_backward(cache.a1, &dg1)?;
    let dh = c.hidden1.backward(cache.l1, &dz1, &mut g.hidden1)?;
    let b = dh.rows();
    let d = dh.cols() / 2;
    let mut db = Tensor::zeros(&[b, d]);
    let mut dc = Tensor::zeros(&[b, d]);
    for i in 0..b {
        db.row_mut(i).copy_from_slice(&dh.row(i)[..d]);
        dc.row_mut(i).copy_from_slice(&dh.row(i)[d..]);
    }
    Ok((db, dc))
}

pub struct ForwardCache<T> {
    items: ItemEncodeCache<T>,
    history: HistoryEncodeCache<T>,
    classifier: ClassifierCache<T>,
    contexts: Vec<usize>,
}

/// Full forward pass over a batch; returns logits `[B, n_classes]`.
pub fn forward<T: Scalar>(
    p: &ModelParams<T>,
    cfg: &ModelConfig,
    batch: &Batch<'_>,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    if batch.histories.len() != batch.contexts.len() {
        return Err(Error::Precondition(format!(
            "{} histories but {} contexts",
            batch.histories.len(),
            batch.contexts.len()
        )));
    }
    let (item_emb, items) = encode_items(p, cfg, &batch.items)?;
    let (buyer, history) = encode_histories(p, cfg, &item_emb, &batch.histories)?;
    let context = item_emb.gather_rows(&batch.contexts)?;
    let (logits, classifier) = classify(p, &buyer, &context)?;
    Ok((
        logits,
        ForwardCache {
            items,
            history,
            classifier,
            contexts: batch.contexts.clone(),
        },
    ))
}

/// Accumulates parameter gradients of a loss with gradient `d_logits`.
pub fn backward<T: Scalar>(
    p: &ModelParams<T>,
    cfg: &ModelConfig,
    cache: ForwardCache<T>,
    d_logits: &Tensor<T>,
    grads: &mut ModelParams<T>,
) -> Result<()> {
    let (d_buyer, d_context) = classify_backward(p, cache.classifier, d_logits, grads)?;
    let mut d_items = encode_histories_backward(p, cfg, cache.history, &d_buyer, grads)?;
    for (i, &row) in cache.contexts.iter().enumerate() {
        add_row(d_items.row_mut(row), d_context.row(i));
    }
    encode_items_backward(p, cache.items, &d_items, grads)
}

/// Mean cross-entropy of `logits` against `labels` and its gradient.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let b = logits.rows();
    let n = logits.cols();
    if labels.len() != b || b == 0 {
        return Err(Error::Precondition(format!("{} labels for {b} rows", labels.len())));
    }
    let inv_b = T::one() / T::from_usize(b).unwrap();
    let mut loss = T::zero();
    let mut grad = Tensor::zeros(&[b, n]);
    for (i, &y) in labels.iter().enumerate() {
        check_id(y, n)?;
        let row = logits.row(i);
        let lse = presize_nn::layers::log_sum_exp(row);
        loss += lse - row[y];
        let g = grad.row_mut(i);
        for (gk, &zk) in g.iter_mut().zip(row) {
            *gk = (zk - lse).exp() * inv_b;
        }
        g[y] -= inv_b;
    }
    Ok((loss * inv_b, grad))
}
