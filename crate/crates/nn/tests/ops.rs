use presize_nn::gradcheck::{grad_check, DEFAULT_STEP};
use presize_nn::layers::{gelu_scalar, log_softmax};
use presize_nn::params::{join, zeros_like};
use presize_nn::{
    gelu, gelu_backward, softmax, Adam, AdamConfig, Embedding, LayerNorm, Linear, MultiHeadAttention, NnError,
    Parameters, Tensor, TransformerStack,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A module plus its input, so finite differences cover `dL/dx` as well.
#[derive(Clone)]
struct WithInput<M> {
    module: M,
    x: Tensor<f64>,
}

impl<M: Parameters<f64>> Parameters<f64> for WithInput<M> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor<f64>)) {
        self.module.visit(&join(prefix, "module"), f);
        f(&join(prefix, "x"), &self.x);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<f64>)) {
        self.module.visit_mut(&join(prefix, "module"), f);
        f(&join(prefix, "x"), &mut self.x);
    }
}

/// Random linear read-out `L = sum(y * r)` so every output entry matters.
fn readout(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn linear_identity_and_hand_sum() {
    let id = Linear::new(
        Tensor::from_rows(&[vec![1.0f32, 0.0], vec![0.0, 1.0]]).unwrap(),
        Tensor::new(vec![2], vec![0.0, 0.0]).unwrap(),
    )
    .unwrap();
    let x = Tensor::from_rows(&[vec![1.0f32, 2.0]]).unwrap();
    assert_eq!(id.apply(&x).unwrap().data(), &[1.0, 2.0]);

    let l = Linear::new(
        Tensor::from_rows(&[vec![2.0f32], vec![3.0]]).unwrap(),
        Tensor::new(vec![1], vec![1.0]).unwrap(),
    )
    .unwrap();
    let x = Tensor::from_rows(&[vec![1.0f32, 1.0]]).unwrap();
    assert_eq!(l.apply(&x).unwrap().data(), &[6.0]);
}

#[test]
fn linear_shape_mismatch_is_error() {
    let l = Linear::<f32>::init(3, 2, &mut rng(0));
    let x = Tensor::zeros(&[1, 4]);
    assert!(matches!(l.apply(&x), Err(NnError::Shape { .. })));
}

#[test]
fn linear_gradients_match_finite_differences() {
    let mut r = rng(1);
    let case = WithInput {
        module: Linear::<f64>::init(4, 2, &mut r),
        x: Tensor::randn(&[3, 4], 1.0, &mut r),
    };
    let ro = Tensor::randn(&[3, 2], 1.0, &mut r);
    let loss = |c: &WithInput<Linear<f64>>| readout(&c.module.apply(&c.x).unwrap(), &ro);
    let mut grad = zeros_like(&case);
    let (_, cache) = case.module.forward(&case.x).unwrap();
    grad.x = case.module.backward(cache, &ro, &mut grad.module).unwrap();
    let report = grad_check(&case, &grad, loss, DEFAULT_STEP, 1e-6);
    assert!(report.passed(), "{report:?}");
}

#[test]
fn corrupted_backward_fails_check() {
    let mut r = rng(2);
    let case = WithInput {
        module: Linear::<f64>::init(4, 2, &mut r),
        x: Tensor::randn(&[3, 4], 1.0, &mut r),
    };
    let ro = Tensor::randn(&[3, 2], 1.0, &mut r);
    let loss = |c: &WithInput<Linear<f64>>| readout(&c.module.apply(&c.x).unwrap(), &ro);
    let mut grad = zeros_like(&case);
    let (_, cache) = case.module.forward(&case.x).unwrap();
    grad.x = case.module.backward(cache, &ro, &mut grad.module).unwrap();
    grad.module.weight.data_mut()[3] *= 1.5;
    let report = grad_check(&case, &grad, loss, DEFAULT_STEP, 1e-6);
    assert!(!report.passed());
    assert_eq!(report.failures().len(), 1);
    assert_eq!(report.failures()[0].name, "module.weight");
}

#[test]
fn layer_norm_trivial_rows() {
    let ln = LayerNorm::<f64>::new(3);
    let (y, _) = ln.forward(&Tensor::from_rows(&[vec![1.0, 1.0, 1.0]]).unwrap()).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
    let ln = LayerNorm::<f64>::new(2);
    let (y, _) = ln.forward(&Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap()).unwrap();
    assert!((y.data()[0] - 1.0).abs() < 1e-5 && (y.data()[1] + 1.0).abs() < 1e-5);
}

#[test]
fn layer_norm_gradients_match_finite_differences() {
    let mut r = rng(3);
    let mut ln = LayerNorm::<f64>::new(5);
    ln.gamma = Tensor::randn(&[5], 1.0, &mut r);
    ln.beta = Tensor::randn(&[5], 1.0, &mut r);
    let case = WithInput {
        module: ln,
        x: Tensor::randn(&[4, 5], 1.0, &mut r),
    };
    let ro = Tensor::randn(&[4, 5], 1.0, &mut r);
    let loss = |c: &WithInput<LayerNorm<f64>>| readout(&c.module.forward(&c.x).unwrap().0, &ro);
    let mut grad = zeros_like(&case);
    let (_, cache) = case.module.forward(&case.x).unwrap();
    grad.x = case.module.backward(cache, &ro, &mut grad.module).unwrap();
    let report = grad_check(&case, &grad, loss, DEFAULT_STEP, 1e-5);
    assert!(report.passed(), "{report:?}");
}

#[test]
fn gelu_values() {
    assert_eq!(gelu_scalar(0.0f64), 0.0);
    assert!((gelu_scalar(10.0f64) - 10.0).abs() < 1e-6);
    // Independent evaluation of x * Phi(x) with Phi from erfc.
    let phi_1 = 0.5 * libm::erfc(-1.0 / 2f64.sqrt());
    assert!((gelu_scalar(1.0f64) - phi_1).abs() < 1e-15);
    assert!((gelu_scalar(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-12);
}

#[test]
fn gelu_gradient_matches_finite_differences() {
    let mut r = rng(4);
    let x = Tensor::<f64>::randn(&[2, 6], 2.0, &mut r);
    let ro = Tensor::randn(&[2, 6], 1.0, &mut r);
    let (_, cache) = gelu(&x);
    let dx = gelu_backward(cache, &ro).unwrap();
    let report = grad_check(&x, &dx, |x| readout(&gelu(x).0, &ro), DEFAULT_STEP, 1e-5);
    assert!(report.passed(), "{report:?}");
}

#[test]
fn softmax_examples() {
    let y = softmax(&Tensor::new(vec![3], vec![0.0f64, 0.0, 0.0]).unwrap());
    for v in y.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
    let y = softmax(&Tensor::new(vec![2], vec![1000.0f32, 0.0]).unwrap());
    assert!(y.is_finite());
    assert!((y.data()[0] - 1.0).abs() < 1e-6 && y.data()[1] < 1e-6);
    let y = softmax(&Tensor::new(vec![3], vec![1f64.ln(), 2f64.ln(), 3f64.ln()]).unwrap());
    for (v, e) in y.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert!((v - e).abs() < 1e-12);
    }
    let l = log_softmax(&Tensor::new(vec![2], vec![1000.0f32, 0.0]).unwrap());
    assert!(l.is_finite());
}

fn attention_case(seed: u64) -> (WithInput<MultiHeadAttention<f64>>, Vec<bool>, Tensor<f64>) {
    let mut r = rng(seed);
    let attn = MultiHeadAttention::init(8, 2, &mut r).unwrap();
    let mut attn = attn;
    // Larger weights than the 0.02 init so attention is far from uniform.
    attn.visit_mut("", &mut |_, t| {
        let noise = Tensor::randn(t.shape(), 0.4, &mut r);
        t.add_assign(&noise).unwrap();
    });
    let x = Tensor::randn(&[2, 4, 8], 1.0, &mut r);
    let mask = vec![true, true, true, false, true, true, false, false];
    let ro = Tensor::randn(&[2, 4, 8], 1.0, &mut r);
    (WithInput { module: attn, x }, mask, ro)
}

#[test]
fn attention_heads_must_divide_dim() {
    assert!(matches!(
        MultiHeadAttention::<f32>::init(10, 3, &mut rng(0)),
        Err(NnError::Config(_))
    ));
}

#[test]
fn attention_gradients_match_finite_differences() {
    let (case, mask, ro) = attention_case(5);
    let loss = |c: &WithInput<MultiHeadAttention<f64>>| readout(&c.module.forward(&c.x, &mask).unwrap().0, &ro);
    let mut grad = zeros_like(&case);
    let (_, cache) = case.module.forward(&case.x, &mask).unwrap();
    grad.x = case.module.backward(cache, &ro, &mut grad.module).unwrap();
    let report = grad_check(&case, &grad, loss, DEFAULT_STEP, 1e-4);
    assert!(report.passed(), "{report:?}");
}

#[test]
fn attention_single_token_is_value_then_output_projection() {
    let mut r = rng(6);
    let attn = MultiHeadAttention::<f64>::init(4, 2, &mut r).unwrap();
    let x = Tensor::randn(&[1, 1, 4], 1.0, &mut r);
    let (y, _) = attn.forward(&x, &[true]).unwrap();
    let v = attn.qkv.apply(&x).unwrap();
    let v = Tensor::new(vec![1, 4], v.data()[8..12].to_vec()).unwrap();
    let expected = attn.out.apply(&v).unwrap();
    for (a, b) in y.data().iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn attention_one_valid_key_is_one_hot() {
    let (case, _, _) = attention_case(7);
    let mask = vec![false, true, false, false, true, true, true, true];
    let (_, cache) = case.module.forward(&case.x, &mask).unwrap();
    let probs = case.module.probs(&cache);
    // batch 0, both heads, every query row: all weight on key 1.
    for h in 0..2 {
        for i in 0..4 {
            let row = &probs[(h * 4 + i) * 4..(h * 4 + i) * 4 + 4];
            assert_eq!(row, &[0.0, 1.0, 0.0, 0.0]);
        }
    }
}

#[test]
fn masked_keys_receive_no_gradient_from_valid_outputs() {
    let (case, mask, mut ro) = attention_case(8);
    // Only read out valid positions.
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            ro.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut grad = zeros_like(&case);
    let (_, cache) = case.module.forward(&case.x, &mask).unwrap();
    let dx = case.module.backward(cache, &ro, &mut grad.module).unwrap();
    for (i, &m) in mask.iter().enumerate() {
        if !m {
            assert!(dx.row(i).iter().all(|&v| v == 0.0), "row {i}");
        }
    }
}

#[test]
fn transformer_zero_layers_is_identity() {
    let stack = TransformerStack::<f32>::init(0, 8, 2, 32, &mut rng(0)).unwrap();
    let x = Tensor::randn(&[2, 3, 8], 1.0, &mut rng(1));
    let (y, _) = stack.forward(&x, &[true; 6]).unwrap();
    assert_eq!(y, x);
}

#[test]
fn transformer_padding_content_is_isolated() {
    let mut r = rng(9);
    let stack = TransformerStack::<f32>::init(2, 8, 2, 32, &mut r).unwrap();
    let mut x = Tensor::randn(&[1, 5, 8], 1.0, &mut r);
    let mask = [true, true, true, false, false];
    let (y1, _) = stack.forward(&x, &mask).unwrap();
    // Swap and scramble the padded rows.
    let a = x.row(3).to_vec();
    let b = x.row(4).to_vec();
    x.row_mut(3).copy_from_slice(&b);
    x.row_mut(4).iter_mut().zip(&a).for_each(|(v, &s)| *v = 3.0 * s - 1.0);
    let (y2, _) = stack.forward(&x, &mask).unwrap();
    for i in 0..3 {
        assert_eq!(y1.row(i), y2.row(i));
    }
}

#[test]
fn transformer_stack_gradients_match_finite_differences() {
    let mut r = rng(10);
    let mut stack = TransformerStack::<f64>::init(2, 8, 2, 32, &mut r).unwrap();
    stack.visit_mut("", &mut |_, t| {
        let noise = Tensor::randn(t.shape(), 0.2, &mut r);
        t.add_assign(&noise).unwrap();
    });
    let case = WithInput {
        module: stack,
        x: Tensor::randn(&[2, 3, 8], 1.0, &mut r),
    };
    let mask = [true, true, false, true, true, true];
    let ro = Tensor::randn(&[2, 3, 8], 1.0, &mut r);
    let loss = |c: &WithInput<TransformerStack<f64>>| readout(&c.module.forward(&c.x, &mask).unwrap().0, &ro);
    let mut grad = zeros_like(&case);
    let (_, cache) = case.module.forward(&case.x, &mask).unwrap();
    grad.x = case.module.backward(cache, &ro, &mut grad.module).unwrap();
    let report = grad_check(&case, &grad, loss, DEFAULT_STEP, 1e-3);
    assert!(report.passed(), "{report:?}");
}

#[test]
fn embedding_duplicates_and_empty() {
    let mut r = rng(11);
    let emb = Embedding::<f64>::init(3, 2, &mut r);
    let y = emb.forward(&[0, 0]).unwrap();
    assert_eq!(y.row(0), emb.table.row(0));
    assert_eq!(y.row(1), emb.table.row(0));
    let dy = Tensor::from_rows(&[vec![1.0, 2.0], vec![10.0, 20.0]]).unwrap();
    let mut g = zeros_like(&emb);
    emb.backward(&[0, 0], &dy, &mut g).unwrap();
    assert_eq!(g.table.row(0), &[11.0, 22.0]);
    assert_eq!(g.table.row(1), &[0.0, 0.0]);

    assert!(emb.forward(&[]).unwrap().is_empty());
    assert!(matches!(emb.forward(&[3]), Err(NnError::Index { index: 3, len: 3 })));
}

#[test]
fn embedding_gradient_matches_finite_differences() {
    let mut r = rng(12);
    let emb = Embedding::<f64>::init(5, 3, &mut r);
    let ids = [4, 1, 4, 0];
    let ro = Tensor::randn(&[4, 3], 1.0, &mut r);
    let mut g = zeros_like(&emb);
    emb.backward(&ids, &ro, &mut g).unwrap();
    let report = grad_check(&emb, &g, |e| readout(&e.forward(&ids).unwrap(), &ro), DEFAULT_STEP, 1e-6);
    assert!(report.passed(), "{report:?}");
}

#[test]
fn adam_zero_gradient_leaves_params() {
    let mut p = Tensor::new(vec![3], vec![1.0f64, -2.0, 3.0]).unwrap();
    let before = p.clone();
    let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &p);
    opt.step(&mut p, &Tensor::zeros(&[3])).unwrap();
    assert_eq!(p, before);
    assert_eq!(opt.step_count(), 1);
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = Tensor::new(vec![1], vec![0.5f64]).unwrap();
    let mut opt = Adam::new(AdamConfig { lr: 0.1, ..Default::default() }, &p);
    opt.step(&mut p, &Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
    // m_hat / sqrt(v_hat) = 1, so the step is lr / (1 + eps).
    assert!((p.data()[0] - (0.5 - 0.1 / (1.0 + 1e-8))).abs() < 1e-12);
}

#[test]
fn adam_matches_scalar_reference() {
    // Independent scalar implementation of the bias-corrected update.
    fn reference(mut p: f64, grads: &[f64], lr: f64) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        let mut out = vec![];
        for (t, &g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            p -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            out.push(p);
        }
        out
    }
    let grads = [0.3, 0.3];
    let expected = reference(1.0, &grads, 0.01);
    let mut p = Tensor::new(vec![1], vec![1.0f64]).unwrap();
    let mut opt = Adam::new(AdamConfig { lr: 0.01, ..Default::default() }, &p);
    for (g, e) in grads.iter().zip(expected) {
        opt.step(&mut p, &Tensor::new(vec![1], vec![*g]).unwrap()).unwrap();
        assert!((p.data()[0] - e).abs() < 1e-15);
    }
}

#[test]
fn adam_rejects_nan_with_parameter_name() {
    let lin = Linear::<f32>::init(2, 2, &mut rng(0));
    let mut p = lin.clone();
    let mut opt = Adam::new(AdamConfig::default(), &p);
    let mut g = zeros_like(&lin);
    g.bias.data_mut()[1] = f32::NAN;
    match opt.step(&mut p, &g) {
        Err(NnError::NonFinite(msg)) => assert!(msg.contains("bias")),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(p, lin);
    assert_eq!(opt.step_count(), 0);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in proptest::collection::vec(-1000.0f32..1000.0, 1..20)) {
            let n = v.len();
            let y = softmax(&Tensor::new(vec![n], v).unwrap());
            prop_assert!(y.data().iter().all(|&p| p >= 0.0));
            prop_assert!((y.sum() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn forward_is_deterministic(seed in 0u64..1000) {
            let stack = TransformerStack::<f32>::init(1, 8, 2, 16, &mut rng(seed)).unwrap();
            let x = Tensor::randn(&[2, 3, 8], 1.0, &mut rng(seed + 1));
            let mask = [true, true, false, true, false, false];
            let a = stack.forward(&x, &mask).unwrap().0;
            let b = stack.forward(&x, &mask).unwrap().0;
            prop_assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
