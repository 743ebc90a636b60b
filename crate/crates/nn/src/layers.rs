//! Linear, layer-norm, GELU, softmax and embedding primitives with explicit
//! backward passes.
//!
//! Every `forward` returns the output together with a cache that its
//! `backward` consumes by value, so a cache can be used exactly once.
//! Backward functions accumulate parameter gradients into a gradient module
//! of the same type (see [`crate::params::zeros_like`]).

use rand::Rng;

use crate::error::{shape_err, NnError, Result};
use crate::params::{join, Parameters};
use crate::scalar::{gemm, Scalar};
use crate::tensor::Tensor;

/// Standard deviation of the normal initializer for weights and embeddings.
pub const INIT_STD: f64 = 0.02;

/// Layer-norm epsilon.
pub const LN_EPS: f64 = 1e-5;

fn out_shape(input: &[usize], last: usize) -> Vec<usize> {
    let mut s = input.to_vec();
    match s.last_mut() {
        Some(l) => *l = last,
        None => s.push(last),
    }
    s
}

/// `y = x W + b` applied over the last dimension of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// `[in, out]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

#[derive(Debug)]
pub struct LinearCache<T> {
    input: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(shape_err(
                "linear",
                "weight [in, out] and bias [out]",
                format!("weight {:?}, bias {:?}", weight.shape(), bias.shape()),
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::randn(&[in_dim, out_dim], INIT_STD, rng),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// Forward pass without keeping a cache.
    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (din, dout) = (self.in_dim(), self.out_dim());
        if x.cols() != din || x.shape().is_empty() {
            return Err(shape_err("linear", format!("last dim {din}"), format!("{:?}", x.shape())));
        }
        let rows = x.rows();
        let mut out = Vec::with_capacity(rows * dout);
        for _ in 0..rows {
            out.extend_from_slice(self.bias.data());
        }
        gemm(rows, din, dout, x.data(), false, self.weight.data(), false, T::one(), &mut out);
        Tensor::new(out_shape(x.shape(), dout), out)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LinearCache<T>)> {
        let y = self.apply(x)?;
        Ok((y, LinearCache { input: x.clone() }))
    }

    /// Returns `dL/dx`; adds `dL/dW` and `dL/db` into `grad`.
    pub fn backward(&self, cache: LinearCache<T>, dy: &Tensor<T>, grad: &mut Linear<T>) -> Result<Tensor<T>> {
        let x = cache.input;
        let (din, dout) = (self.in_dim(), self.out_dim());
        let rows = x.rows();
        if dy.cols() != dout || dy.rows() != rows {
            return Err(shape_err(
                "linear backward",
                format!("[{rows}, {dout}]"),
                format!("{:?}", dy.shape()),
            ));
        }
        gemm(din, rows, dout, x.data(), true, dy.data(), false, T::one(), grad.weight.data_mut());
        let gb = grad.bias.data_mut();
        for r in 0..rows {
            for (g, &d) in gb.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let mut dx = vec![T::zero(); rows * din];
        gemm(rows, dout, din, dy.data(), false, self.weight.data(), true, T::zero(), &mut dx);
        Tensor::new(x.shape().to_vec(), dx)
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-row normalization to zero mean and unit variance followed by an
/// elementwise affine map. Epsilon is [`LN_EPS`].
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

#[derive(Debug)]
pub struct LayerNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Tensor::full(&[dim], T::one()),
            beta: Tensor::zeros(&[dim]),
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, LayerNormCache<T>)> {
        let d = self.dim();
        if x.cols() != d || x.shape().is_empty() {
            return Err(shape_err("layer_norm", format!("last dim {d}"), format!("{:?}", x.shape())));
        }
        let rows = x.rows();
        let n = T::from_usize(d).unwrap();
        let eps = T::from_f64_lossy(LN_EPS);
        let mut xhat = x.clone();
        let mut out = x.clone();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(r);
            for (h, &v) in xh.iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
            let o = out.row_mut(r);
            for j in 0..d {
                o[j] = xh[j] * self.gamma.data()[j] + self.beta.data()[j];
            }
        }
        Ok((out, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(&self, cache: LayerNormCache<T>, dy: &Tensor<T>, grad: &mut LayerNorm<T>) -> Result<Tensor<T>> {
        let d = self.dim();
        let LayerNormCache { xhat, inv_std } = cache;
        if dy.shape() != xhat.shape() {
            return Err(shape_err(
                "layer_norm backward",
                format!("{:?}", xhat.shape()),
                format!("{:?}", dy.shape()),
            ));
        }
        let n = T::from_usize(d).unwrap();
        let mut dx = Tensor::zeros(xhat.shape());
        let mut dxhat = vec![T::zero(); d];
        for (r, &is) in inv_std.iter().enumerate() {
            let g = dy.row(r);
            let xh = xhat.row(r);
            {
                let gg = grad.gamma.data_mut();
                for j in 0..d {
                    gg[j] += g[j] * xh[j];
                }
            }
            {
                let gb = grad.beta.data_mut();
                for j in 0..d {
                    gb[j] += g[j];
                }
            }
            let gamma = self.gamma.data();
            for j in 0..d {
                dxhat[j] = g[j] * gamma[j];
            }
            let mean_d = dxhat.iter().copied().sum::<T>() / n;
            let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
            let out = dx.row_mut(r);
            for j in 0..d {
                out[j] = is * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        }
        Ok(dx)
    }
}

impl<T: Scalar> Parameters<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Exact GELU, `x * Phi(x) = 0.5 * x * (1 + erf(x / sqrt(2)))`.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    half * x * (T::one() + (x * T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Derivative of [`gelu_scalar`]: `Phi(x) + x * phi(x)`.
pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let cdf = half * (T::one() + (x * T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * T::from_f64_lossy(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

#[derive(Debug)]
pub struct GeluCache<T> {
    input: Tensor<T>,
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, GeluCache<T>) {
    (x.map(gelu_scalar), GeluCache { input: x.clone() })
}

pub fn gelu_backward<T: Scalar>(cache: GeluCache<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let mut x = cache.input;
    if x.shape() != dy.shape() {
        return Err(shape_err("gelu backward", format!("{:?}", x.shape()), format!("{:?}", dy.shape())));
    }
    for (v, &g) in x.data_mut().iter_mut().zip(dy.data()) {
        *v = gelu_grad_scalar(*v) * g;
    }
    Ok(x)
}

/// Softmax over the last dimension with max subtraction.
pub fn softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    if out.is_empty() {
        return out;
    }
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Log-softmax over the last dimension via log-sum-exp.
pub fn log_softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    if out.is_empty() {
        return out;
    }
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    out
}

pub fn log_sum_exp<T: Scalar>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Row lookup table.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T> {
    /// `[vocab, dim]`
    pub table: Tensor<T>,
}

impl<T: Scalar> Embedding<T> {
    pub fn init<R: Rng + ?Sized>(vocab: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            table: Tensor::randn(&[vocab, dim], INIT_STD, rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.table.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape()[1]
    }

    /// Gathers rows; output shape is `[ids.len(), dim]`.
    pub fn forward(&self, ids: &[usize]) -> Result<Tensor<T>> {
        self.table.gather_rows(ids)
    }

    /// Scatter-adds `dy` rows into `grad.table`; duplicate ids sum.
    pub fn backward(&self, ids: &[usize], dy: &Tensor<T>, grad: &mut Embedding<T>) -> Result<()> {
        let d = self.dim();
        if dy.rows() != ids.len() || (dy.cols() != d && !ids.is_empty()) {
            return Err(shape_err(
                "embedding backward",
                format!("[{}, {d}]", ids.len()),
                format!("{:?}", dy.shape()),
            ));
        }
        let v = self.vocab();
        for (r, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(NnError::Index { index: id, len: v });
            }
            let src = dy.row(r);
            for (g, &s) in grad.table.row_mut(id).iter_mut().zip(src) {
                *g += s;
            }
        }
        Ok(())
    }
}

impl<T: Scalar> Parameters<T> for Embedding<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f(&join(prefix, "table"), &self.table);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&join(prefix, "table"), &mut self.table);
    }
}
