mod common;

use common::*;
use presize::model::network::{self, encode_items};
use presize::model::*;
use presize::tokenizer::PAD_ID;
use presize_nn::{grad_check, parameter_count, zeros_like, Tensor};

fn encode<'a>(
    corpus: &'a mut ItemCorpus,
    model: &SizeModel,
    examples: &[presize::data::TrainingExample],
) -> Vec<EncodedExample> {
    examples
        .iter()
        .map(|e| {
            corpus
                .encode_example(&e.history, e.target_item(), e.target_day(), e.label_id, &model.tokenizer, &model.config)
                .unwrap()
        })
        .collect()
}

#[test]
fn positions_restart_per_attribute() {
    let m = tiny_model(8, 1, 0);
    let it = item("x", &["men", "tops", "shirts"], &[("title", "a b"), ("brand", "x")]);
    let t = m.item_tokens(&it, false).unwrap();
    let brand = m.config.attributes.id("brand").unwrap() as u32;
    let first = t.attr_ids.iter().position(|&a| a == brand).unwrap();
    assert_eq!(t.pos_ids[first], 0, "first brand token sits at position 1");
    // title "a b" is two tokens: separators are not emitted
    let title = m.config.attributes.id("title").unwrap() as u32;
    assert_eq!(t.attr_ids[..t.n_valid()].iter().filter(|&&a| a == title).count(), 2);
    assert_eq!(t.pos_ids[1], 1);
}

#[test]
fn masking_drops_title_and_size() {
    let m = tiny_model(8, 1, 0);
    let it = item("x", &["men"], &[("title", "classic"), ("size", "m")]);
    let t = m.item_tokens(&it, true).unwrap();
    let cat = m.config.attributes.id("category").unwrap() as u32;
    assert!(t.attr_ids.iter().zip(&t.valid).all(|(&a, &v)| !v || a == cat));
    // without the category pseudo-attribute only padding remains
    let mut cfg = m.config.clone();
    cfg.removed_attributes.push("category".into());
    let t = item_token_triplets(&it, &m.tokenizer, &cfg, true).unwrap();
    assert_eq!(t.n_valid(), 0);
    assert!(t.token_ids.iter().all(|&x| x == PAD_ID));
}

#[test]
fn long_items_are_cut_at_the_tail() {
    let m = tiny_model(8, 1, 0);
    let title: String = (0..60).map(|i| format!("w{i} ")).collect();
    let it = item("x", &["men"], &[("title", title.trim())]);
    let full = presize::tokenizer::BpeVocab::normalize(title.trim());
    let n_title: usize = m
        .tokenizer
        .encode(&full, None)
        .iter()
        .filter(|&&t| !(t < 256 && (t as u8).is_ascii_whitespace()))
        .count();
    assert!(n_title > 45);
    let t = m.item_tokens(&it, false).unwrap();
    assert_eq!(t.token_ids.len(), 45);
    assert_eq!(t.n_valid(), 45);
    let title_id = m.config.attributes.id("title").unwrap() as u32;
    assert!(t.attr_ids.iter().all(|&a| a == title_id), "category is beyond the cut");
}

#[test]
fn unknown_attribute_is_rejected() {
    let m = tiny_model(8, 1, 0);
    let it = item("x", &["men"], &[("title", "a"), ("colour", "red")]);
    assert!(matches!(m.item_tokens(&it, false), Err(presize::Error::UnknownAttribute(_))));
}

#[test]
fn temporal_ids() {
    let id = |d: u32| temporal_id(0, d, 17).unwrap();
    assert_eq!([id(0), id(1), id(2), id(3), id(365)], [0, 1, 1, 2, 8]);
    assert_eq!(temporal_id(0, u32::MAX, 17).unwrap(), 16);
    assert!(temporal_id(5, 4, 17).is_err());
}

#[test]
fn padded_tail_does_not_reach_the_embedding() {
    let m = tiny_model(16, 2, 3);
    let it = shirt("a", "classic shirt", "m", "acme");
    let t = m.item_tokens(&it, false).unwrap();
    let mut noisy = t.clone();
    for k in noisy.n_valid()..noisy.token_ids.len() {
        noisy.token_ids[k] = 5;
        noisy.attr_ids[k] = 2;
        noisy.pos_ids[k] = 7;
    }
    let a = m.item_embeddings(&[&t]).unwrap();
    let b = m.item_embeddings(&[&noisy]).unwrap();
    assert_eq!(a, b);
    // batch composition does not change a row either
    let other = m.item_tokens(&item("z", &["women", "x"], &[("title", "slim slim slim slim slim")]), false).unwrap();
    let c = m.item_embeddings(&[&other, &t]).unwrap();
    assert_eq!(c.row(1), a.row(0));
}

#[test]
fn output_is_a_distribution_and_ignores_target_title_and_size() {
    let m = tiny_model(16, 2, 1);
    for seed in 0..10 {
        let e = example(1 + seed % 5, seed);
        let d = m.predict(&e.history, e.target_item(), e.target_day(), TemporalReference::Query).unwrap();
        assert_eq!(d.probs.len(), 4);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        assert!(d.probs.iter().all(|&p| p >= 0.0));
        let other = shirt("target", "totally different title", "xl", e.target_item().attribute("brand").unwrap());
        let d2 = m.predict(&e.history, &other, e.target_day(), TemporalReference::Query).unwrap();
        assert_eq!(d.probs, d2.probs);
    }
}

#[test]
fn only_the_latest_history_items_matter() {
    let m = tiny_model(16, 1, 2);
    let e = example(30, 4);
    let full = m.predict(&e.history, e.target_item(), e.target_day(), TemporalReference::Query).unwrap();
    let cut = m
        .predict(&e.history[5..], e.target_item(), e.target_day(), TemporalReference::Query)
        .unwrap();
    assert_eq!(full, cut);
    assert!(m.predict(&[], e.target_item(), e.target_day(), TemporalReference::Query).is_err());
}

#[test]
fn batched_prediction_matches_single() {
    let m = tiny_model(16, 2, 5);
    let examples: Vec<_> = (0..7).map(|s| example(1 + s * 2, s)).collect();
    let batched = m.predict_examples(&examples, TemporalReference::Query, 3).unwrap();
    for (e, b) in examples.iter().zip(&batched) {
        let single = m.predict(&e.history, e.target_item(), e.target_day(), TemporalReference::Query).unwrap();
        assert_eq!(&single, b);
    }
}

#[test]
fn item_and_context_share_the_encoder() {
    let mut m = tiny_model(8, 1, 0);
    let it = shirt("a", "classic shirt", "m", "acme");
    let ctx0 = m.embed_item(&it, true).unwrap();
    let full0 = m.embed_item(&it, false).unwrap();
    m.params.item_encoder.layers[0].ff1.bias.data_mut()[0] += 0.5;
    assert_ne!(m.embed_item(&it, true).unwrap(), ctx0);
    assert_ne!(m.embed_item(&it, false).unwrap(), full0);
}

fn model_loss(p: &ModelParams<f64>, cfg: &ModelConfig, batch: &Batch<'_>, labels: &[usize]) -> f64 {
    let (logits, _) = network::forward(p, cfg, batch).unwrap();
    cross_entropy(&logits, labels).unwrap().0
}

#[test]
fn full_forward_gradient_check() {
    let m = tiny_model(8, 2, 11);
    let cfg = m.config.clone();
    let examples = vec![example(3, 1), example(2, 6)];
    let mut corpus = ItemCorpus::new();
    let enc = encode(&mut corpus, &m, &examples);
    let refs: Vec<&EncodedExample> = enc.iter().collect();
    let (batch, labels) = make_batch(&corpus, &refs, TemporalReference::Query, &cfg).unwrap();
    let p: ModelParams<f64> = ModelParams::init(&cfg, 11).unwrap();
    let (logits, cache) = network::forward(&p, &cfg, &batch).unwrap();
    let (_, dl) = cross_entropy(&logits, &labels).unwrap();
    let mut g = zeros_like(&p);
    network::backward(&p, &cfg, cache, &dl, &mut g).unwrap();
    let report = grad_check(&p, &g, |q| model_loss(q, &cfg, &batch, &labels), 1e-5, 1e-3);
    assert!(report.passed(), "{:?}", report.failures());
}

#[test]
fn item_embedding_gradient_check() {
    let m = tiny_model(8, 2, 4);
    let cfg = m.config.clone();
    let t = m.item_tokens(&shirt("a", "classic shirt", "m", "acme"), false).unwrap();
    let p: ModelParams<f64> = ModelParams::init(&cfg, 4).unwrap();
    let r = Tensor::from_fn(&[1, 8], |i| (i as f64 * 0.37).sin());
    let loss = |q: &ModelParams<f64>| {
        let (e, _) = encode_items(q, &cfg, &[&t]).unwrap();
        e.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, cache) = encode_items(&p, &cfg, &[&t]).unwrap();
    let mut g = zeros_like(&p);
    network::encode_items_backward(&p, cache, &r, &mut g).unwrap();
    let report = grad_check(&p, &g, loss, 1e-5, 1e-3);
    assert!(report.passed(), "{:?}", report.failures());
}

#[test]
fn history_embedding_gradient_check() {
    let cfg = tiny_config(8, 2);
    let p: ModelParams<f64> = ModelParams::init(&cfg, 9).unwrap();
    let items = Tensor::from_fn(&[3, 8], |i| ((i * 13) as f64 * 0.11).cos());
    let slots = vec![
        HistorySlots {
            items: vec![0, 2],
            temporal_ids: vec![3, 0],
        },
        HistorySlots {
            items: vec![1],
            temporal_ids: vec![5],
        },
    ];
    let r = Tensor::from_fn(&[2, 8], |i| (i as f64 * 0.7).sin());
    let loss = |q: &ModelParams<f64>| {
        let (e, _) = network::encode_histories(q, &cfg, &items, &slots).unwrap();
        e.data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let (_, cache) = network::encode_histories(&p, &cfg, &items, &slots).unwrap();
    let mut g = zeros_like(&p);
    network::encode_histories_backward(&p, &cfg, cache, &r, &mut g).unwrap();
    let report = grad_check(&p, &g, loss, 1e-5, 1e-3);
    assert!(report.passed(), "{:?}", report.failures());
    assert!(network::encode_histories(&p, &cfg, &items, &[HistorySlots { items: vec![], temporal_ids: vec![] }]).is_err());
}

#[test]
fn parameter_count_closed_form() {
    for d in [32, 128, 512] {
        let mut cfg = ModelConfig::new(286, 8000, presize::data::AttributeRegistry::default()).with_dim(d);
        cfg.validate().unwrap();
        let p: ModelParams<f32> = ModelParams::init(&cfg, 0).unwrap();
        assert_eq!(count_parameters(&cfg), parameter_count(&p), "d = {d}");
        cfg.n_layers = 1;
        let p: ModelParams<f32> = ModelParams::init(&cfg, 0).unwrap();
        assert_eq!(count_parameters(&cfg), parameter_count(&p));
    }
    // 8078 table rows * 512 + 8 layers * 3_152_384 + head 729_630
    let cfg = ModelConfig::new(286, 8000, presize::data::AttributeRegistry::default());
    assert_eq!(count_parameters(&cfg), 30_084_638);
}

#[test]
fn config_validation() {
    let mut c = tiny_config(8, 1);
    c.heads = 3;
    assert!(c.validate().is_err());
    let mut c = tiny_config(8, 1);
    c.history_len = 0;
    assert!(c.validate().is_err());
    let mut c = tiny_config(8, 1);
    c.removed_attributes.push("nope".into());
    assert!(c.validate().is_err());
}

#[test]
fn checkpoint_round_trip() {
    let m = tiny_model(16, 2, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    m.save(&path).unwrap();
    let back = SizeModel::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.fingerprint().unwrap(), m.fingerprint().unwrap());
    for s in 0..3 {
        let e = example(2 + s, s);
        let a = m.predict(&e.history, e.target_item(), e.target_day(), TemporalReference::Query).unwrap();
        let b = back.predict(&e.history, e.target_item(), e.target_day(), TemporalReference::Query).unwrap();
        assert_eq!(a, b);
    }
    let mut other = m.config.clone();
    other.dim = 8;
    other.ffn_dim = 32;
    assert!(SizeModel::load_expecting(&path, &other).is_err());
    assert!(SizeModel::load_expecting(&path, &m.config).is_ok());
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] ^= 0xff;
    assert!(SizeModel::from_bytes(&bytes).is_err());
    let bytes = std::fs::read(&path).unwrap();
    assert!(SizeModel::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}
