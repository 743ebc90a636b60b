use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use presize::data::{FilterConfig, SizeNormalizer, SplitConfig};
use presize::evaluation::Taxonomy;
use presize::pipeline::{desk_train_config, synthetic_filter, Ablation};
use presize::synthgen::WorldConfig;
use presize::training::{TemporalReferenceName, TrainConfig};
use serde::{Deserialize, Serialize};

/// Architecture knobs; the remaining sizes follow from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub dim: usize,
    pub n_layers: usize,
    pub heads: usize,
    /// Feed-forward width as a multiple of `dim`.
    pub ffn_multiplier: usize,
    pub history_len: usize,
    pub item_seq_len: usize,
    pub tokenizer_vocab: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            dim: 64,
            n_layers: 1,
            heads: 4,
            ffn_multiplier: 4,
            history_len: 25,
            item_seq_len: 45,
            tokenizer_vocab: 8000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub dims: Vec<usize>,
    pub history_lens: Vec<usize>,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            dims: vec![16, 32, 64],
            history_lens: vec![1, 5, 10, 25],
        }
    }
}

/// Everything a command needs, resolved from defaults, the config file and
/// flags, in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Dataset directory.
    pub data: PathBuf,
    pub world: WorldConfig,
    pub filter: FilterConfig,
    pub split: SplitConfig,
    pub synonyms: Option<PathBuf>,
    pub stoplist: Option<PathBuf>,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub ablation: Ablation,
    /// Day anchoring temporal ids at prediction time.
    pub inference_reference: TemporalReferenceName,
    pub eval_batch: usize,
    pub taxonomy: Taxonomy,
    pub sweep: SweepSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: PathBuf::from("data"),
            world: WorldConfig::default(),
            filter: synthetic_filter(),
            split: SplitConfig::default(),
            synonyms: None,
            stoplist: None,
            model: ModelSettings::default(),
            train: desk_train_config(0),
            ablation: Ablation::None,
            inference_reference: TemporalReferenceName::Query,
            eval_batch: 256,
            taxonomy: Taxonomy::default(),
            sweep: SweepSettings::default(),
        }
    }
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub dim: Option<usize>,
    pub history_len: Option<usize>,
    pub remove: Option<String>,
    pub keep_only: Option<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                let file: toml::Table =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
                let mut base = toml::Table::try_from(RunConfig::default())?;
                merge(&mut base, file);
                toml::Value::Table(base)
                    .try_into()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        cfg.world.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        if let Some(d) = &o.data {
            cfg.data = d.clone();
        }
        if let Some(d) = o.dim {
            cfg.model.dim = d;
        }
        if let Some(h) = o.history_len {
            cfg.model.history_len = h;
            cfg.split.max_history = cfg.split.max_history.max(h);
        }
        match (&o.remove, &o.keep_only) {
            (Some(_), Some(_)) => bail!("--remove and --keep-only cannot be combined"),
            (Some(r), None) => cfg.ablation = Ablation::parse_remove(r),
            (None, Some(k)) => cfg.ablation = Ablation::KeepOnly(k.clone()),
            (None, None) => {}
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn normalizer(&self) -> Result<SizeNormalizer> {
        Ok(match (&self.synonyms, &self.stoplist) {
            (None, None) => SizeNormalizer::default(),
            (Some(s), Some(l)) => SizeNormalizer::from_files(s, l)?,
            _ => bail!("synonyms and stoplist must be given together"),
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Overlays `top` onto `base`; tables merge key by key, anything else
/// replaces. Sections given partially keep the run defaults for the rest.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
