use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use presize::model::SizeModel;
use serde_json::Value;
use tempfile::TempDir;

const CONFIG: &str = r#"
seed = 3

[world]
n_buyers = 60
n_purchases = 900
n_items = 80

[filter]
min_purchases = 2
min_count = 1
min_frac = 0.0

[model]
dim = 8
heads = 2
history_len = 6
tokenizer_vocab = 300

[train]
batch_size = 16
lr0 = 0.003
lr_floor = 0.0001
eval_every = 10
val_sample = 50
patience = 2
max_iterations = 20

[sweep]
dims = [4, 8]
history_lens = [1, 3]
"#;

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_presize"))
            .current_dir(self.dir.path())
            .args(args)
            .args(["--config", "run.toml", "--data", "data"])
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn with_data(self) -> Self {
        self.ok(&["gen-data"]);
        self
    }

    fn trained(self) -> Self {
        self.ok(&["train", "--out", "run"]);
        self
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&read(p)).unwrap()
}

#[test]
fn gen_data_twice_is_byte_identical() {
    let env = Env::new();
    env.ok(&["gen-data", "--seed", "7"]);
    let first: Vec<Vec<u8>> = ["records.jsonl", "truth.json", "run.json"]
        .iter()
        .map(|f| read(&env.path("data").join(f)))
        .collect();
    env.ok(&["gen-data", "--seed", "7"]);
    for (f, bytes) in ["records.jsonl", "truth.json", "run.json"].iter().zip(&first) {
        assert_eq!(&read(&env.path("data").join(f)), bytes, "{f}");
    }
    assert_eq!(json(&env.path("data/run.json"))["seed"], 7);
    env.ok(&["gen-data", "--seed", "8"]);
    assert_ne!(read(&env.path("data/records.jsonl")), first[0]);
}

#[test]
fn training_is_reproducible_and_records_its_config() {
    let env = Env::new().with_data().trained();
    let model = read(&env.path("run/model.bin"));
    env.ok(&["train", "--out", "run2"]);
    assert_eq!(read(&env.path("run2/model.bin")), model);
    assert_eq!(
        read(&env.path("run/train_summary.json")),
        read(&env.path("run2/train_summary.json"))
    );
    let m = SizeModel::load(&env.path("run/model.bin")).unwrap();
    let cfg = m.run_config.expect("model records its run config");
    assert_eq!(cfg["seed"], 3);
    assert_eq!(cfg["model"]["dim"], 8);
    assert_eq!(cfg, json(&env.path("run/run.json")));
    let log = std::fs::read_to_string(env.path("run/train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
}

#[test]
fn resume_continues_from_the_checkpoint() {
    let env = Env::new().with_data().trained();
    let model = read(&env.path("run/model.bin"));
    env.ok(&["train", "--out", "run", "--resume"]);
    assert_eq!(read(&env.path("run/model.bin")), model);
    let out = env.run(&["train", "--out", "run", "--resume", "--dim", "4"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("different configuration"));
}

#[test]
fn baseline_and_model_reports_share_a_schema() {
    let env = Env::new().with_data().trained();
    let table = env.ok(&["evaluate", "--baseline", "pmcv", "--out", "pmcv.json"]);
    assert!(table.contains("pmcv"));
    env.ok(&["evaluate", "--checkpoint", "run/model.bin", "--out", "model.json"]);
    let b = json(&env.path("pmcv.json"));
    let m = json(&env.path("model.json"));
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&b), keys(&m));
    assert_eq!(keys(&b["report"]), keys(&m["report"]));
    assert_eq!(keys(&b["report"]["overall"]), keys(&m["report"]["overall"]));
    assert_eq!(b["source"]["baseline"], "pmcv");
    assert_eq!(m["model_run_config"]["seed"], 3);
    let p = m["report"]["overall"]["micro_precision"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
}

#[test]
fn ablate_remove_temporal_freezes_a_zero_table() {
    let env = Env::new().with_data();
    let table = env.ok(&["ablate", "--remove", "temporal", "--out", "abl"]);
    assert!(table.contains("remove-temporal") && table.contains("full"));
    let m = SizeModel::load(&env.path("abl/remove-temporal/model.bin")).unwrap();
    assert!(!m.config.use_temporal);
    assert!(m.params.temporal_embedding.table.data().iter().all(|&x| x == 0.0));
    let full = SizeModel::load(&env.path("abl/full/model.bin")).unwrap();
    assert!(full.params.temporal_embedding.table.data().iter().any(|&x| x != 0.0));
    let doc = json(&env.path("abl/ablation.json"));
    assert_eq!(doc["variants"].as_array().unwrap().len(), 2);
}

#[test]
fn ablate_keep_only_drops_other_context() {
    let env = Env::new().with_data();
    env.ok(&["ablate", "--keep-only", "brand", "--out", "abl"]);
    let m = SizeModel::load(&env.path("abl/keep-only-brand/model.bin")).unwrap();
    assert!(!m.config.removed_attributes.is_empty());
    assert!(!m.config.removed_attributes.contains(&"brand".to_string()));
}

#[test]
fn sweep_trains_every_setting() {
    let env = Env::new().with_data();
    let table = env.ok(&["sweep", "--out", "sw"]);
    for v in ["dim-4", "dim-8", "history-1", "history-3"] {
        assert!(table.contains(v), "{v}");
        assert!(env.path("sw").join(v).join("model.bin").exists());
    }
    let m = SizeModel::load(&env.path("sw/history-1/model.bin")).unwrap();
    assert_eq!(m.config.history_len, 1);
}

#[test]
fn cached_features_match_direct_features() {
    let env = Env::new().with_data().trained();
    env.ok(&["embed-items", "--checkpoint", "run/model.bin", "--out", "items.emb"]);
    env.ok(&["features", "--checkpoint", "run/model.bin", "--out", "direct.jsonl"]);
    env.ok(&["features", "--checkpoint", "run/model.bin", "--cache", "items.emb", "--out", "cached.jsonl"]);
    let direct = read(&env.path("direct.jsonl"));
    assert!(!direct.is_empty());
    assert_eq!(direct, read(&env.path("cached.jsonl")));
    for line in String::from_utf8(direct).unwrap().lines() {
        let r: Value = serde_json::from_str(line).unwrap();
        let (t, b) = (r["total_score"].as_f64().unwrap(), r["best_score"].as_f64().unwrap());
        assert!(b <= t + 1e-12 && t <= 1.0 + 1e-9);
        assert!(r["best_rank"].as_u64().unwrap() >= 1);
    }
}

#[test]
fn predict_emits_a_distribution() {
    let env = Env::new().with_data().trained();
    let records = std::fs::read_to_string(env.path("data/records.jsonl")).unwrap();
    let rec: Value = records
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .find(|r| r["day"].as_u64().unwrap() > 60)
        .unwrap();
    let out = env.ok(&[
        "predict",
        "--checkpoint",
        "run/model.bin",
        "--buyer",
        rec["buyer_id"].as_str().unwrap(),
        "--item",
        rec["item_id"].as_str().unwrap(),
        "--day",
        "119",
    ]);
    let doc: Value = serde_json::from_str(&out).unwrap();
    let sizes = doc["sizes"].as_array().unwrap();
    let total: f64 = sizes.iter().map(|s| s["probability"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-4);
    let probs: Vec<f64> = sizes.iter().map(|s| s["probability"].as_f64().unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let env = Env::new();
    let out = env.run(&["train"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("records.jsonl"));
    let env = env.with_data();
    let out = env.run(&["ablate", "--remove", "brand", "--keep-only", "brand"]);
    assert!(!out.status.success());
    let out = env.run(&["evaluate", "--baseline", "median"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown baseline"));
    let out = env.run(&["evaluate"]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));
    let out = env.run(&["ablate", "--remove", "no-such-attribute"]);
    assert!(!out.status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let env = Env::new();
    std::fs::write(env.path("run.toml"), "[model]\ndimm = 4\n").unwrap();
    let out = env.run(&["gen-data"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimm"));
}

#[test]
fn nested_unknown_keys_are_rejected() {
    let env = Env::new();
    std::fs::write(env.path("run.toml"), "[train]\nlr = 0.1\n").unwrap();
    let out = env.run(&["gen-data"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr"));
}

#[test]
fn partial_sections_keep_run_defaults() {
    let env = Env::new();
    std::fs::write(env.path("run.toml"), "[train]\nmax_iterations = 7\n").unwrap();
    env.ok(&["gen-data"]);
    let with_file = json(&env.path("data/run.json"));
    std::fs::write(env.path("run.toml"), "").unwrap();
    env.ok(&["gen-data"]);
    let defaults = json(&env.path("data/run.json"));
    assert_eq!(with_file["train"]["max_iterations"], 7);
    for key in ["batch_size", "lr0", "lr_floor", "patience", "eval_every"] {
        assert_eq!(with_file["train"][key], defaults["train"][key], "{key}");
    }
    assert_eq!(with_file["model"], defaults["model"]);
}
