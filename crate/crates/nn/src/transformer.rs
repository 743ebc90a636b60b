use rand::Rng;

use crate::attention::{AttentionCache, MultiHeadAttention};
use crate::error::{shape_err, Result};
use crate::layers::{gelu, gelu_backward, GeluCache, LayerNorm, LayerNormCache, Linear, LinearCache};
use crate::params::{join, Parameters};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One post-norm encoder layer:
/// `h = LN1(x + MHA(x))`, `y = LN2(h + W2 GELU(W1 h))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerLayer<T> {
    pub attn: MultiHeadAttention<T>,
    pub ln1: LayerNorm<T>,
    pub ff1: Linear<T>,
    pub ff2: Linear<T>,
    pub ln2: LayerNorm<T>,
}

#[derive(Debug)]
pub struct TransformerLayerCache<T> {
    attn: AttentionCache<T>,
    ln1: LayerNormCache<T>,
    ff1: LinearCache<T>,
    act: GeluCache<T>,
    ff2: LinearCache<T>,
    ln2: LayerNormCache<T>,
}

impl<T: Scalar> TransformerLayer<T> {
    pub fn init<R: Rng + ?Sized>(dim: usize, heads: usize, ffn_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::init(dim, heads, rng)?,
            ln1: LayerNorm::new(dim),
            ff1: Linear::init(dim, ffn_dim, rng),
            ff2: Linear::init(ffn_dim, dim, rng),
            ln2: LayerNorm::new(dim),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mask: &[bool]) -> Result<(Tensor<T>, TransformerLayerCache<T>)> {
        let (a, attn) = self.attn.forward(x, mask)?;
        let (h, ln1) = self.ln1.forward(&x.add(&a)?)?;
        let (f1, ff1) = self.ff1.forward(&h)?;
        let (g, act) = gelu(&f1);
        let (f2, ff2) = self.ff2.forward(&g)?;
        let (y, ln2) = self.ln2.forward(&h.add(&f2)?)?;
        Ok((
            y,
            TransformerLayerCache {
                attn,
                ln1,
                ff1,
                act,
                ff2,
                ln2,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: TransformerLayerCache<T>,
        dy: &Tensor<T>,
        grad: &mut TransformerLayer<T>,
    ) -> Result<Tensor<T>> {
        let dr2 = self.ln2.backward(cache.ln2, dy, &mut grad.ln2)?;
        let dg = self.ff2.backward(cache.ff2, &dr2, &mut grad.ff2)?;
        let df1 = gelu_backward(cache.act, &dg)?;
        let mut dh = self.ff1.backward(cache.ff1, &df1, &mut grad.ff1)?;
        dh.add_assign(&dr2)?;
        let dr1 = self.ln1.backward(cache.ln1, &dh, &mut grad.ln1)?;
        let mut dx = self.attn.backward(cache.attn, &dr1, &mut grad.attn)?;
        dx.add_assign(&dr1)?;
        Ok(dx)
    }
}

impl<T: Scalar> Parameters<T> for TransformerLayer<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.attn.visit(&join(prefix, "attn"), f);
        self.ln1.visit(&join(prefix, "ln1"), f);
        self.ff1.visit(&join(prefix, "ff1"), f);
        self.ff2.visit(&join(prefix, "ff2"), f);
        self.ln2.visit(&join(prefix, "ln2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.attn.visit_mut(&join(prefix, "attn"), f);
        self.ln1.visit_mut(&join(prefix, "ln1"), f);
        self.ff1.visit_mut(&join(prefix, "ff1"), f);
        self.ff2.visit_mut(&join(prefix, "ff2"), f);
        self.ln2.visit_mut(&join(prefix, "ln2"), f);
    }
}

/// A stack of [`TransformerLayer`]s sharing one padding mask. An empty stack
/// is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerStack<T> {
    pub layers: Vec<TransformerLayer<T>>,
}

#[derive(Debug)]
pub struct TransformerStackCache<T> {
    layers: Vec<TransformerLayerCache<T>>,
}

impl<T: Scalar> TransformerStack<T> {
    pub fn init<R: Rng + ?Sized>(
        n_layers: usize,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|_| TransformerLayer::init(dim, heads, ffn_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// `x` is `[batch, len, dim]`; `mask` has `batch * len` entries, `true` for
    /// valid positions.
    pub fn forward(&self, x: &Tensor<T>, mask: &[bool]) -> Result<(Tensor<T>, TransformerStackCache<T>)> {
        let s = x.shape();
        if s.len() != 3 || mask.len() != s[0] * s[1] {
            return Err(shape_err("transformer", "[batch, len, dim] with matching mask", format!("{:?}", x.shape())));
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&h, mask)?;
            caches.push(c);
            h = y;
        }
        Ok((h, TransformerStackCache { layers: caches }))
    }

    pub fn backward(
        &self,
        cache: TransformerStackCache<T>,
        dy: &Tensor<T>,
        grad: &mut TransformerStack<T>,
    ) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        for ((layer, c), gl) in self
            .layers
            .iter()
            .zip(cache.layers)
            .zip(grad.layers.iter_mut())
            .rev()
        {
            g = layer.backward(c, &g, gl)?;
        }
        Ok(g)
    }
}

impl<T: Scalar> Parameters<T> for TransformerStack<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        self.layers.visit(prefix, f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.layers.visit_mut(prefix, f);
    }
}
