use crate::params::{named_tensors, Parameters};
use crate::tensor::Tensor;

/// Central-difference step used by [`grad_check`] callers by default.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor for relative errors, so entries whose true gradient is
/// ~0 are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tolerance
    }

    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.max_rel_error >= self.tolerance)
            .collect()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares `analytic` gradients against central finite differences of
/// `loss` with step `h`, parameter by parameter.
///
/// Runs in 64-bit precision only. `analytic` must have the same structure as
/// `params`.
pub fn grad_check<P, F>(params: &P, analytic: &P, mut loss: F, h: f64, tolerance: f64) -> GradCheckReport
where
    P: Parameters<f64> + Clone,
    F: FnMut(&P) -> f64,
{
    let analytic: Vec<(String, Tensor<f64>)> = named_tensors(analytic)
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let sizes: Vec<usize> = named_tensors(params).into_iter().map(|(_, t)| t.len()).collect();
    assert_eq!(sizes.len(), analytic.len(), "gradient structure differs from parameters");
    let mut work = params.clone();
    let mut tensors = Vec::with_capacity(sizes.len());
    for (ti, &size) in sizes.iter().enumerate() {
        let mut worst = 0.0;
        let mut worst_index = 0;
        for idx in 0..size {
            let original = read(&work, ti, idx);
            write(&mut work, ti, idx, original + h);
            let up = loss(&work);
            write(&mut work, ti, idx, original - h);
            let down = loss(&work);
            write(&mut work, ti, idx, original);
            let numeric = (up - down) / (2.0 * h);
            let err = relative_error(analytic[ti].1.data()[idx], numeric);
            if err > worst || err.is_nan() {
                worst = if err.is_nan() { f64::INFINITY } else { err };
                worst_index = idx;
            }
        }
        tensors.push(TensorCheck {
            name: analytic[ti].0.clone(),
            max_rel_error: worst,
            worst_index,
        });
    }
    GradCheckReport { tolerance, tensors }
}

fn read<P: Parameters<f64>>(p: &P, tensor: usize, idx: usize) -> f64 {
    let mut out = 0.0;
    let mut i = 0;
    p.visit("", &mut |_, t| {
        if i == tensor {
            out = t.data()[idx];
        }
        i += 1;
    });
    out
}

fn write<P: Parameters<f64>>(p: &mut P, tensor: usize, idx: usize, value: f64) {
    let mut i = 0;
    p.visit_mut("", &mut |_, t| {
        if i == tensor {
            t.data_mut()[idx] = value;
        }
        i += 1;
    });
}
