use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use presize::baselines::{Baseline, CategorySizeStats};
use presize::data::{read_records, write_records, Purchase, PurchaseRecord, TrainingExample, TITLE, CATEGORY};
use presize::evaluation::{slice_evaluate, EvalReport};
use presize::features::{
    build_embedding_cache, size_features, write_feature_records, CachedPredictor, FeatureRecord, ItemEmbeddingCache,
};
use presize::model::{ModelConfig, SizeDistribution, SizeModel, TemporalReference};
use presize::pipeline::{argmaxes, predict_baseline, Ablation, Dataset};
use presize::synthgen::{generate_histories, generate_world, GroundTruth};
use presize::tokenizer::BpeVocab;
use presize::training::{StopReason, TrainReport, Trainer};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;

const RECORDS: &str = "records.jsonl";
const TRUTH: &str = "truth.json";
const TOKENIZER: &str = "tokenizer.txt";
const RUN: &str = "run.json";
const MODEL: &str = "model.bin";

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_records(cfg: &RunConfig) -> Result<Vec<PurchaseRecord>> {
    let path = cfg.data.join(RECORDS);
    let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_records(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let records = load_records(cfg)?;
    let mut split = cfg.split;
    split.max_history = split.max_history.max(cfg.model.history_len);
    Ok(Dataset::from_records(&records, &cfg.normalizer()?, &cfg.filter, split)?)
}

fn load_truth(cfg: &RunConfig) -> Result<Option<GroundTruth>> {
    let path = cfg.data.join(TRUTH);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(GroundTruth::load(&path).with_context(|| format!("reading {}", path.display()))?))
}

fn tokenizer(cfg: &RunConfig, ds: &Dataset) -> Result<BpeVocab> {
    let path = cfg.data.join(TOKENIZER);
    if path.exists() {
        let text = std::fs::read_to_string(&path)?;
        return BpeVocab::from_text(&text).with_context(|| format!("reading {}", path.display()));
    }
    Ok(ds.train_tokenizer(cfg.model.tokenizer_vocab)?)
}

fn load_model(ckpt: Option<&Path>, ds: &Dataset) -> Result<SizeModel> {
    let path = ckpt.ok_or_else(|| anyhow!("--checkpoint is required"))?;
    let model = SizeModel::load(path).with_context(|| format!("loading model {}", path.display()))?;
    if model.sizes.labels() != ds.vocab.labels() {
        bail!("model size vocabulary does not match the dataset in use");
    }
    Ok(model)
}

fn model_config(cfg: &RunConfig, ds: &Dataset, tok: &BpeVocab) -> Result<ModelConfig> {
    let m = &cfg.model;
    let mut mc = ModelConfig::new(ds.vocab.len(), tok.vocab_size(), ds.registry.clone()).with_dim(m.dim);
    mc.n_layers = m.n_layers;
    mc.heads = m.heads;
    mc.ffn_dim = m.ffn_multiplier * m.dim;
    mc.history_len = m.history_len;
    mc.item_seq_len = m.item_seq_len;
    mc.n_positions = m.item_seq_len;
    cfg.ablation.apply(&mut mc)?;
    mc.validate()?;
    Ok(mc)
}

fn new_model(cfg: &RunConfig, ds: &Dataset, tok: BpeVocab) -> Result<SizeModel> {
    let mc = model_config(cfg, ds, &tok)?;
    let mut model = SizeModel::new(mc, tok, ds.vocab.clone(), cfg.seed)?;
    model.run_config = Some(cfg.to_json());
    Ok(model)
}

fn print_log(report: &TrainReport) {
    for e in &report.log {
        eprintln!(
            "iteration {:>6}  train {:.4}  val {:.4}  lr {:.2e}",
            e.iteration, e.train_loss, e.val_loss, e.lr
        );
    }
    let why = match report.stop {
        StopReason::LearningRateFloor => "learning rate reached the floor",
        StopReason::MaxIterations => "iteration cap reached",
    };
    eprintln!("stopped after {} iterations: {why}", report.iterations);
}

/// Reproducible summary of a run; wallclock stays in the CSV log.
fn train_summary(report: &TrainReport) -> serde_json::Value {
    json!({
        "iterations": report.iterations,
        "stop": report.stop,
        "validation": report.log.iter().map(|e| json!({
            "iteration": e.iteration,
            "train_loss": e.train_loss,
            "val_loss": e.val_loss,
            "lr": e.lr,
        })).collect::<Vec<_>>(),
    })
}

/// Trains one model into `dir`: model, CSV log, checkpoint and summary.
fn train_into(cfg: &RunConfig, ds: &Dataset, tok: BpeVocab, dir: &Path, ckpt: &Path) -> Result<SizeModel> {
    std::fs::create_dir_all(dir)?;
    let model = new_model(cfg, ds, tok)?;
    let log = dir.join("train_log.csv");
    if log.exists() {
        std::fs::remove_file(&log)?;
    }
    let trainer = Trainer::new(model, &ds.split.train, &ds.split.val, cfg.train.clone())?
        .with_log(log)
        .with_checkpoint(ckpt);
    finish_training(cfg, trainer, dir)
}

fn model_predictions(cfg: &RunConfig, model: &SizeModel, examples: &[TrainingExample]) -> Result<Vec<SizeDistribution>> {
    let reference: TemporalReference = cfg.inference_reference.into();
    Ok(model.predict_examples(examples, reference, cfg.eval_batch)?)
}

fn report_for(cfg: &RunConfig, name: &str, ds: &Dataset, dists: &[SizeDistribution]) -> Result<EvalReport> {
    let preds = argmaxes(dists);
    Ok(slice_evaluate(name, &ds.split.test, &preds, ds.vocab.len(), &cfg.taxonomy)?)
}

pub fn gen_data(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let dir = out.unwrap_or(&cfg.data);
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let world = generate_world(&cfg.world)?;
    let (records, truth) = generate_histories(&world)?;
    let mut w = BufWriter::new(File::create(dir.join(RECORDS))?);
    write_records(&mut w, &records)?;
    w.flush()?;
    truth.save(&dir.join(TRUTH))?;
    let mut resolved = cfg.clone();
    resolved.data = dir.to_path_buf();
    write_json(&dir.join(RUN), &resolved.to_json())?;
    println!(
        "wrote {} purchases by {} buyers to {}",
        records.len(),
        truth.buyers.len(),
        dir.display()
    );
    Ok(())
}

pub fn tokenizer_train(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let tok = ds.train_tokenizer(cfg.model.tokenizer_vocab)?;
    let path = out.map(PathBuf::from).unwrap_or_else(|| cfg.data.join(TOKENIZER));
    std::fs::write(&path, tok.to_text()).with_context(|| format!("writing {}", path.display()))?;
    println!("tokenizer with {} tokens written to {}", tok.vocab_size(), path.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, out: Option<&Path>, ckpt: Option<&Path>, resume: bool) -> Result<()> {
    let dir = out.map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/train"));
    let ckpt = ckpt.map(PathBuf::from).unwrap_or_else(|| dir.join("train.ckpt"));
    let ds = load_dataset(cfg)?;
    if !resume {
        let tok = tokenizer(cfg, &ds)?;
        train_into(cfg, &ds, tok, &dir, &ckpt)?;
        println!("model written to {}", dir.join(MODEL).display());
        return Ok(());
    }
    let trainer = Trainer::resume(&ckpt, &ds.split.train, &ds.split.val)
        .with_context(|| format!("resuming from {}", ckpt.display()))?;
    if trainer.model.run_config.as_ref() != Some(&cfg.to_json()) {
        bail!("the checkpoint was written under a different configuration");
    }
    let trainer = trainer.with_log(dir.join("train_log.csv")).with_checkpoint(&ckpt);
    finish_training(cfg, trainer, &dir)?;
    println!("model written to {}", dir.join(MODEL).display());
    Ok(())
}

fn finish_training(cfg: &RunConfig, mut trainer: Trainer, dir: &Path) -> Result<SizeModel> {
    let report = trainer.run()?;
    print_log(&report);
    let model = trainer.into_model();
    model.save(&dir.join(MODEL))?;
    write_json(&dir.join("train_summary.json"), &train_summary(&report))?;
    write_json(&dir.join(RUN), &cfg.to_json())?;
    Ok(model)
}

pub fn evaluate(cfg: &RunConfig, ckpt: Option<&Path>, baseline: Option<&str>, out: Option<&Path>) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let (source, model_config, report) = match (baseline, ckpt) {
        (Some(_), Some(_)) => bail!("--baseline and --checkpoint cannot be combined"),
        (Some(b), None) => {
            let kind = Baseline::parse(b).ok_or_else(|| anyhow!("unknown baseline `{b}`; expected mcv, mrv or pmcv"))?;
            let stats = ds.baseline_stats();
            let dists = predict_baseline(kind, &stats, &ds.split.test);
            let report = report_for(cfg, kind.name(), &ds, &dists)?;
            (json!({ "baseline": kind.name() }), None, report)
        }
        (None, _) => {
            let model = load_model(ckpt, &ds)?;
            let dists = model_predictions(cfg, &model, &ds.split.test)?;
            let report = report_for(cfg, "presize", &ds, &dists)?;
            (json!({ "model": model.fingerprint()? }), model.run_config.clone(), report)
        }
    };
    print!("{}", report.to_table());
    if let Some(path) = out {
        let doc = json!({
            "source": source,
            "run_config": cfg.to_json(),
            "model_run_config": model_config,
            "report": report,
        });
        write_json(path, &doc)?;
    }
    Ok(())
}

/// The remove-one / keep-one protocol over the dataset's attributes.
fn ablation_variants(ds: &Dataset) -> Vec<Ablation> {
    let context: Vec<String> = ds.registry.context_attributes().map(String::from).collect();
    let mut v = vec![
        Ablation::None,
        Ablation::Remove(TITLE.into()),
        Ablation::Remove(CATEGORY.into()),
    ];
    v.extend(context.iter().cloned().map(Ablation::Remove));
    v.push(Ablation::RemoveAllContext);
    v.push(Ablation::RemoveTemporal);
    v.extend(context.into_iter().map(Ablation::KeepOnly));
    v
}

#[derive(Serialize)]
struct VariantRow {
    variant: String,
    micro_precision: f64,
    macro_f1: f64,
}

fn run_variants(
    base: &RunConfig,
    ds: &Dataset,
    tok: &BpeVocab,
    dir: &Path,
    variants: Vec<(String, RunConfig)>,
) -> Result<Vec<VariantRow>> {
    let mut rows = Vec::new();
    for (name, cfg) in variants {
        eprintln!("== {name}");
        let vdir = dir.join(&name);
        let model = train_into(&cfg, ds, tok.clone(), &vdir, &vdir.join("train.ckpt"))?;
        let dists = model_predictions(base, &model, &ds.split.test)?;
        let report = report_for(base, &name, ds, &dists)?;
        write_json(&dir.join(&name).join("report.json"), &report)?;
        rows.push(VariantRow {
            variant: name,
            micro_precision: report.overall.micro_precision,
            macro_f1: report.overall.macro_f1,
        });
    }
    Ok(rows)
}

fn print_rows(rows: &[VariantRow]) {
    let w = rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
    println!("{:<w$}  {:>9}  {:>9}", "variant", "micro P", "macro F1");
    for r in rows {
        println!("{:<w$}  {:>9.4}  {:>9.4}", r.variant, r.micro_precision, r.macro_f1);
    }
}

pub fn ablate(cfg: &RunConfig, out: Option<&Path>, single: bool) -> Result<()> {
    let dir = out.map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/ablate"));
    let ds = load_dataset(cfg)?;
    let tok = tokenizer(cfg, &ds)?;
    let variants = if single {
        vec![Ablation::None, cfg.ablation.clone()]
    } else {
        ablation_variants(&ds)
    };
    let variants = variants
        .into_iter()
        .map(|a| {
            let mut c = cfg.clone();
            c.ablation = a;
            (c.ablation.name(), c)
        })
        .collect();
    let rows = run_variants(cfg, &ds, &tok, &dir, variants)?;
    print_rows(&rows);
    write_json(&dir.join("ablation.json"), &json!({ "run_config": cfg.to_json(), "variants": rows }))
}

pub fn sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<()> {
    let dir = out.map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs/sweep"));
    let mut wide = cfg.clone();
    wide.model.history_len = cfg.sweep.history_lens.iter().copied().chain([cfg.model.history_len]).max().unwrap_or(1);
    let ds = load_dataset(&wide)?;
    let tok = tokenizer(cfg, &ds)?;
    let mut variants = Vec::new();
    for &d in &cfg.sweep.dims {
        let mut c = cfg.clone();
        c.model.dim = d;
        variants.push((format!("dim-{d}"), c));
    }
    for &h in &cfg.sweep.history_lens {
        let mut c = cfg.clone();
        c.model.history_len = h;
        variants.push((format!("history-{h}"), c));
    }
    let rows = run_variants(cfg, &ds, &tok, &dir, variants)?;
    print_rows(&rows);
    write_json(&dir.join("sweep.json"), &json!({ "run_config": cfg.to_json(), "variants": rows }))
}

fn all_items(ds: &Dataset) -> impl Iterator<Item = &presize::data::Item> {
    ds.histories.iter().flat_map(|h| &h.purchases).map(|p| p.item.as_ref())
}

pub fn embed_items(cfg: &RunConfig, ckpt: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let model = load_model(ckpt, &ds)?;
    let cache = build_embedding_cache(all_items(&ds), &model)?;
    let path = out
        .map(PathBuf::from)
        .unwrap_or_else(|| ckpt.and_then(Path::parent).unwrap_or(Path::new(".")).join("items.emb"));
    cache.save(&path)?;
    println!("{} item embeddings written to {}", cache.len(), path.display());
    Ok(())
}

/// Sizes on offer for an item: the catalogue when ground truth is present,
/// otherwise every size sold in the item's leaf category during training.
fn available_sizes(
    cfg: &RunConfig,
    ds: &Dataset,
    truth: Option<&GroundTruth>,
    stats: &CategorySizeStats,
    e: &TrainingExample,
) -> Result<Vec<usize>> {
    let item = e.target_item();
    if let Some(ci) = truth.and_then(|t| t.world.item(&item.item_id)) {
        let norm = cfg.normalizer()?;
        return Ok(ci
            .available
            .iter()
            .filter_map(|l| norm.normalize(l))
            .filter_map(|l| ds.vocab.id(&l))
            .collect());
    }
    Ok(stats
        .counts(&item.category_path)
        .map(|c| c.iter().enumerate().filter(|(_, &n)| n > 0).map(|(i, _)| i).collect())
        .unwrap_or_default())
}

pub fn features(cfg: &RunConfig, ckpt: Option<&Path>, cache: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let model = load_model(ckpt, &ds)?;
    let truth = load_truth(cfg)?;
    let stats = ds.baseline_stats();
    let test = &ds.split.test;
    let dists = match cache {
        None => model_predictions(cfg, &model, test)?,
        Some(path) => {
            let cache = ItemEmbeddingCache::load(path).with_context(|| format!("loading {}", path.display()))?;
            let predictor = CachedPredictor::new(&model, &cache)?;
            test.iter()
                .map(|e| {
                    let start = e.history.len().saturating_sub(model.config.history_len);
                    let hist: Vec<(&str, u32)> = e.history[start..]
                        .iter()
                        .map(|p| (p.item.item_id.as_str(), p.purchase_day))
                        .collect();
                    predictor.predict_from_cache(&hist, e.target_item(), e.target_day(), cfg.inference_reference.into())
                })
                .collect::<presize::Result<Vec<_>>>()?
        }
    };
    let mut records = Vec::with_capacity(test.len());
    let mut skipped = 0;
    for (e, d) in test.iter().zip(&dists) {
        let avail = available_sizes(cfg, &ds, truth.as_ref(), &stats, e)?;
        if avail.is_empty() {
            skipped += 1;
            continue;
        }
        let f = size_features(d, &avail)?;
        records.push(FeatureRecord {
            buyer_id: e.buyer_id.clone(),
            item_id: e.target_item().item_id.clone(),
            total_score: f.total_score,
            best_score: f.best_score,
            best_rank: f.best_rank,
        });
    }
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            write_feature_records(&mut w, &records)?;
            w.flush()?;
            eprintln!("{} feature records written to {}", records.len(), path.display());
        }
        None => write_feature_records(std::io::stdout().lock(), &records)?,
    }
    if skipped > 0 {
        eprintln!("{skipped} examples skipped: no known available size");
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, ckpt: Option<&Path>, buyer: &str, item: &str, day: u32, out: Option<&Path>) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let model = load_model(ckpt, &ds)?;
    let history: Vec<Purchase> = ds
        .histories
        .iter()
        .find(|h| h.buyer_id == buyer)
        .ok_or_else(|| anyhow!("unknown buyer `{buyer}`"))?
        .purchases
        .iter()
        .filter(|p| p.purchase_day < day)
        .cloned()
        .collect();
    if history.is_empty() {
        bail!("buyer `{buyer}` has no purchases before day {day}");
    }
    let target = all_items(&ds)
        .find(|i| i.item_id == item)
        .ok_or_else(|| anyhow!("unknown item `{item}`"))?;
    let dist = model.predict(&history, target, day, cfg.inference_reference.into())?;
    let sizes: Vec<_> = dist
        .top_k(dist.probs.len())
        .into_iter()
        .map(|(i, p)| json!({ "size": model.sizes.label(i), "probability": p }))
        .collect();
    let doc = json!({ "buyer": buyer, "item": item, "day": day, "sizes": sizes });
    match out {
        Some(path) => write_json(path, &doc)?,
        None => println!("{}", serde_json::to_string_pretty(&doc)?),
    }
    Ok(())
}
