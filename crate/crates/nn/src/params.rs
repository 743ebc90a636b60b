use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named traversal over the learnable tensors of a module.
///
/// Visiting order is fixed by the implementation and is what the optimizer,
/// the gradient checker and checkpoint files rely on.
pub trait Parameters<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<T: Scalar> Parameters<T> for Tensor<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        f(prefix, self)
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(prefix, self)
    }
}

impl<T: Scalar, P: Parameters<T>> Parameters<T> for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<T>)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

pub fn named_tensors<T: Scalar, P: Parameters<T>>(p: &P) -> Vec<(String, &Tensor<T>)> {
    let mut out = Vec::new();
    p.visit("", &mut |name, t| out.push((name.to_string(), t)));
    out
}

pub fn parameter_count<T: Scalar, P: Parameters<T>>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, t| n += t.len());
    n
}

/// A structurally identical copy with every tensor zeroed; used as a
/// gradient accumulator.
pub fn zeros_like<T: Scalar, P: Parameters<T> + Clone>(p: &P) -> P {
    let mut g = p.clone();
    g.visit_mut("", &mut |_, t| t.fill(T::zero()));
    g
}

/// Adds `scale * other` into `acc`, matching tensors by visiting order.
pub fn accumulate<T: Scalar, P: Parameters<T>>(acc: &mut P, other: &P, scale: T) {
    let src: Vec<&Tensor<T>> = named_tensors(other).into_iter().map(|(_, t)| t).collect();
    let mut i = 0;
    acc.visit_mut("", &mut |_, t| {
        for (a, &b) in t.data_mut().iter_mut().zip(src[i].data()) {
            *a += scale * b;
        }
        i += 1;
    });
}

/// Converts every tensor of `p` to another element type.
pub fn cast_params<T: Scalar, U: Scalar, P, Q>(p: &P, target: &mut Q)
where
    P: Parameters<T>,
    Q: Parameters<U>,
{
    let src: Vec<&Tensor<T>> = named_tensors(p).into_iter().map(|(_, t)| t).collect();
    let mut i = 0;
    target.visit_mut("", &mut |_, t| {
        *t = src[i].cast();
        i += 1;
    });
}
