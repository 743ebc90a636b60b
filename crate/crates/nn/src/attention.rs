use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::layers::{softmax_in_place, Linear, LinearCache};
use crate::params::{join, Parameters};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Multi-head scaled dot-product self-attention over `[batch, len, dim]`
/// inputs with a key padding mask.
///
/// Query, key and value projections share one `[dim, 3 * dim]` linear layer.
/// Keys whose mask entry is `false` get a score of negative infinity, so they
/// receive exactly zero attention weight and zero gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttention<T> {
    pub qkv: Linear<T>,
    pub out: Linear<T>,
    heads: usize,
}

#[derive(Debug)]
pub struct AttentionCache<T> {
    qkv_cache: LinearCache<T>,
    qkv: Tensor<T>,
    probs: Vec<T>,
    mask: Vec<bool>,
    out_cache: LinearCache<T>,
    batch: usize,
    len: usize,
}

impl<T: Scalar> MultiHeadAttention<T> {
    pub fn init<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(NnError::Config(format!(
                "embedding dim {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            qkv: Linear::init(dim, 3 * dim, rng),
            out: Linear::init(dim, dim, rng),
            heads,
        })
    }

    pub fn from_parts(qkv: Linear<T>, out: Linear<T>, heads: usize) -> Result<Self> {
        let dim = out.in_dim();
        if heads == 0 || dim % heads != 0 {
            return Err(NnError::Config(format!(
                "embedding dim {dim} is not divisible by {heads} heads"
            )));
        }
        if qkv.in_dim() != dim || qkv.out_dim() != 3 * dim || out.out_dim() != dim {
            return Err(shape_err("attention", format!("dim {dim}"), "inconsistent projections"));
        }
        Ok(Self { qkv, out, heads })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn dim(&self) -> usize {
        self.out.out_dim()
    }

    fn check(&self, x: &Tensor<T>, mask: &[bool]) -> Result<(usize, usize)> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.dim() {
            return Err(shape_err(
                "attention",
                format!("[batch, len, {}]", self.dim()),
                format!("{s:?}"),
            ));
        }
        if mask.len() != s[0] * s[1] {
            return Err(shape_err(
                "attention mask",
                format!("{} entries", s[0] * s[1]),
                format!("{}", mask.len()),
            ));
        }
        Ok((s[0], s[1]))
    }

    pub fn forward(&self, x: &Tensor<T>, mask: &[bool]) -> Result<(Tensor<T>, AttentionCache<T>)> {
        let (batch, len) = self.check(x, mask)?;
        let d = self.dim();
        let dh = d / self.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qkv, qkv_cache) = self.qkv.forward(x)?;
        let stride = 3 * d;
        let q_all = qkv.data();
        let mut probs = vec![T::zero(); batch * self.heads * len * len];
        let mut ctx = vec![T::zero(); batch * len * d];
        let mut scores = vec![T::zero(); len];
        for b in 0..batch {
            let base = b * len;
            let valid = &mask[base..base + len];
            for h in 0..self.heads {
                let qo = h * dh;
                let ko = d + h * dh;
                let vo = 2 * d + h * dh;
                for i in 0..len {
                    let qi = &q_all[(base + i) * stride + qo..(base + i) * stride + qo + dh];
                    for j in 0..len {
                        scores[j] = if valid[j] {
                            let kj = &q_all[(base + j) * stride + ko..(base + j) * stride + ko + dh];
                            qi.iter().zip(kj).map(|(&a, &c)| a * c).sum::<T>() * scale
                        } else {
                            T::neg_infinity()
                        };
                    }
                    softmax_in_place(&mut scores);
                    let p_off = ((b * self.heads + h) * len + i) * len;
                    probs[p_off..p_off + len].copy_from_slice(&scores);
                    let out = &mut ctx[(base + i) * d + h * dh..(base + i) * d + (h + 1) * dh];
                    for j in 0..len {
                        let p = scores[j];
                        if p == T::zero() {
                            continue;
                        }
                        let vj = &q_all[(base + j) * stride + vo..(base + j) * stride + vo + dh];
                        for (o, &v) in out.iter_mut().zip(vj) {
                            *o += p * v;
                        }
                    }
                }
            }
        }
        let ctx = Tensor::new(vec![batch, len, d], ctx)?;
        let (y, out_cache) = self.out.forward(&ctx)?;
        Ok((
            y,
            AttentionCache {
                qkv_cache,
                qkv,
                probs,
                mask: mask.to_vec(),
                out_cache,
                batch,
                len,
            },
        ))
    }

    /// Attention weights `[batch, heads, len, len]` recorded by a forward pass.
    pub fn probs<'a>(&self, cache: &'a AttentionCache<T>) -> &'a [T] {
        &cache.probs
    }

    pub fn backward(
        &self,
        cache: AttentionCache<T>,
        dy: &Tensor<T>,
        grad: &mut MultiHeadAttention<T>,
    ) -> Result<Tensor<T>> {
        let AttentionCache {
            qkv_cache,
            qkv,
            probs,
            mask,
            out_cache,
            batch,
            len,
        } = cache;
        let d = self.dim();
        let dh = d / self.heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let stride = 3 * d;
        let dctx = self.out.backward(out_cache, dy, &mut grad.out)?;
        let dctx = dctx.data();
        let qa = qkv.data();
        let mut dqkv = vec![T::zero(); batch * len * stride];
        let mut dp = vec![T::zero(); len];
        for b in 0..batch {
            let base = b * len;
            let valid = &mask[base..base + len];
            for h in 0..self.heads {
                let qo = h * dh;
                let ko = d + h * dh;
                let vo = 2 * d + h * dh;
                for i in 0..len {
                    let p_off = ((b * self.heads + h) * len + i) * len;
                    let p = &probs[p_off..p_off + len];
                    let gi = &dctx[(base + i) * d + h * dh..(base + i) * d + (h + 1) * dh];
                    // dP_ij = dctx_i . v_j ; dV_j += P_ij dctx_i
                    let mut dot = T::zero();
                    for j in 0..len {
                        if !valid[j] {
                            dp[j] = T::zero();
                            continue;
                        }
                        let vrow = (base + j) * stride + vo;
                        let vj = &qa[vrow..vrow + dh];
                        dp[j] = gi.iter().zip(vj).map(|(&a, &c)| a * c).sum::<T>();
                        dot += p[j] * dp[j];
                        let dv = &mut dqkv[vrow..vrow + dh];
                        for (o, &g) in dv.iter_mut().zip(gi) {
                            *o += p[j] * g;
                        }
                    }
                    // dS_ij = P_ij (dP_ij - sum_k P_ik dP_ik)
                    let qrow = (base + i) * stride + qo;
                    for j in 0..len {
                        if !valid[j] || p[j] == T::zero() {
                            continue;
                        }
                        let ds = p[j] * (dp[j] - dot) * scale;
                        let krow = (base + j) * stride + ko;
                        for t in 0..dh {
                            let kv = qa[krow + t];
                            let qv = qa[qrow + t];
                            dqkv[qrow + t] += ds * kv;
                            dqkv[krow + t] += ds * qv;
                        }
                    }
                }
            }
        }
        let dqkv = Tensor::new(vec![batch, len, stride], dqkv)?;
        self.qkv.backward(qkv_cache, &dqkv, &mut grad.qkv)
    }
}

impl<T: Scalar> Parameters<T> for MultiHeadAttention<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.qkv.visit(&join(prefix, "qkv"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.qkv.visit_mut(&join(prefix, "qkv"), f);
        self.out.visit_mut(&join(prefix, "out"), f);
    }
}
