use crate::error::{shape_err, NnError, Result};
use crate::params::{named_tensors, Parameters};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam hyper-parameters. Defaults match the usual framework defaults.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam optimizer state: step count plus first and second moments for every
/// parameter tensor, in the module's visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new<P: Parameters<T>>(config: AdamConfig, params: &P) -> Self {
        let shapes: Vec<Vec<usize>> = named_tensors(params)
            .into_iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        Self {
            config,
            step: 0,
            first: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Rebuilds a state from saved moments.
    pub fn from_parts(config: AdamConfig, step: u64, first: Vec<Tensor<T>>, second: Vec<Tensor<T>>) -> Result<Self> {
        if first.len() != second.len() || first.iter().zip(&second).any(|(a, b)| a.shape() != b.shape()) {
            return Err(shape_err("adam state", "congruent moments", "mismatched moments"));
        }
        Ok(Self {
            config,
            step,
            first,
            second,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.first, &self.second)
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One bias-corrected Adam update. Gradients are validated before any
    /// parameter is touched, so a non-finite gradient leaves `params` and the
    /// state unchanged.
    pub fn step<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let grads = named_tensors(grads);
        if grads.len() != self.first.len() {
            return Err(shape_err(
                "adam",
                format!("{} parameter tensors", self.first.len()),
                format!("{}", grads.len()),
            ));
        }
        for ((name, g), m) in grads.iter().zip(&self.first) {
            if g.shape() != m.shape() {
                return Err(shape_err("adam", format!("{name} {:?}", m.shape()), format!("{:?}", g.shape())));
            }
            if !g.is_finite() {
                return Err(NnError::NonFinite(format!("gradient of {name}")));
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let one_b1 = T::from_f64_lossy(1.0 - c.beta1);
        let one_b2 = T::from_f64_lossy(1.0 - c.beta2);
        let bc1 = T::from_f64_lossy(bc1);
        let bc2 = T::from_f64_lossy(bc2);
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        let mut i = 0;
        let first = &mut self.first;
        let second = &mut self.second;
        params.visit_mut("", &mut |_, p| {
            let g = grads[i].1.data();
            let m = first[i].data_mut();
            let v = second[i].data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
            i += 1;
        });
        Ok(())
    }
}
