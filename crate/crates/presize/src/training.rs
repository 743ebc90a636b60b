//! Cross-entropy training with Adam, the plateau-halving learning-rate
//! schedule, and resumable checkpoints.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use presize_nn::{named_tensors, zeros_like, Adam, AdamConfig, Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint;
use crate::data::{SizeVocabulary, TrainingExample};
use crate::error::{Error, Result};
use crate::model::{
    cross_entropy, make_batch, network, EncodedExample, ItemCorpus, ModelConfig, ModelParams, SizeModel,
    TemporalReference,
};
use crate::tokenizer::BpeVocab;

const TRAIN_MAGIC: &[u8; 8] = b"PRSZTRAN";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_floor: f64,
    /// Iterations between validation measurements.
    pub eval_every: u64,
    /// Cap on the validation subsample.
    pub val_sample: usize,
    pub patience: usize,
    pub halving_factor: f64,
    pub seed: u64,
    /// Hard stop regardless of the schedule.
    pub max_iterations: Option<u64>,
    /// Day anchoring temporal ids while training.
    #[serde(default = "default_reference")]
    pub reference: TemporalReferenceName,
}

fn default_reference() -> TemporalReferenceName {
    TemporalReferenceName::LastHistory
}

/// Serializable twin of [`TemporalReference`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalReferenceName {
    LastHistory,
    Query,
}

impl From<TemporalReferenceName> for TemporalReference {
    fn from(r: TemporalReferenceName) -> Self {
        match r {
            TemporalReferenceName::LastHistory => TemporalReference::LastHistory,
            TemporalReferenceName::Query => TemporalReference::Query,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr0: 1e-5,
            lr_floor: 1e-7,
            eval_every: 1000,
            val_sample: 15_000,
            patience: 10,
            halving_factor: 2.0,
            seed: 0,
            max_iterations: None,
            reference: TemporalReferenceName::LastHistory,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.lr0 > 0.0
            && self.lr_floor > 0.0
            && self.lr_floor < self.lr0
            && self.eval_every > 0
            && self.val_sample > 0
            && self.patience > 0
            && self.halving_factor > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub lr: f64,
    /// Best validation loss since the last halving.
    pub best: f64,
    /// Consecutive measurements that failed to beat `best`.
    pub bad_count: usize,
    pub halvings: u32,
}

impl ScheduleState {
    pub fn new(lr0: f64) -> Self {
        Self {
            lr: lr0,
            best: f64::INFINITY,
            bad_count: 0,
            halvings: 0,
        }
    }

    pub fn halted(&self, lr_floor: f64) -> bool {
        self.lr < lr_floor
    }
}

/// Feeds one validation measurement to the schedule. A measurement improves
/// only when strictly below the best since the last halving; after
/// `patience` non-improving measurements the rate is divided by `factor` and
/// the best resets to the current loss.
pub fn lr_schedule_step(val_loss: f64, state: &ScheduleState, patience: usize, factor: f64) -> ScheduleState {
    let mut s = state.clone();
    if val_loss < s.best {
        s.best = val_loss;
        s.bad_count = 0;
    } else {
        s.bad_count += 1;
        if s.bad_count >= patience {
            s.lr /= factor;
            s.halvings += 1;
            s.bad_count = 0;
            s.best = val_loss;
        }
    }
    s
}

/// Mean cross-entropy of a batch and its parameter gradients.
pub fn batch_loss<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    corpus: &ItemCorpus,
    examples: &[&EncodedExample],
    reference: TemporalReference,
) -> Result<(T, ModelParams<T>)> {
    let (batch, labels) = make_batch(corpus, examples, reference, cfg)?;
    let (logits, cache) = network::forward(params, cfg, &batch)?;
    let (loss, d_logits) = cross_entropy(&logits, &labels)?;
    let mut grads = zeros_like(params);
    network::backward(params, cfg, cache, &d_logits, &mut grads)?;
    Ok((loss, grads))
}

/// Mean cross-entropy without gradients, evaluated in chunks.
pub fn mean_loss<T: Scalar>(
    params: &ModelParams<T>,
    cfg: &ModelConfig,
    corpus: &ItemCorpus,
    examples: &[&EncodedExample],
    reference: TemporalReference,
    chunk: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("no examples to score".into()));
    }
    let mut total = 0.0;
    for c in examples.chunks(chunk.max(1)) {
        let (batch, labels) = make_batch(corpus, c, reference, cfg)?;
        let (logits, _) = network::forward(params, cfg, &batch)?;
        let (loss, _) = cross_entropy(&logits, &labels)?;
        total += loss.to_f64_lossy() * c.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub iteration: u64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    /// Seconds since the run (or resumed run) started; not reproducible.
    pub wallclock: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub iteration: u64,
    pub epoch: u64,
    pub cursor: usize,
    pub schedule: ScheduleState,
    pub log: Vec<LogEntry>,
    pub window_loss: f64,
    pub window_steps: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    LearningRateFloor,
    MaxIterations,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub iterations: u64,
    pub stop: StopReason,
    pub log: Vec<LogEntry>,
}

#[derive(Serialize, Deserialize)]
struct TrainHeader {
    config: ModelConfig,
    tokenizer: String,
    sizes: Vec<String>,
    train: TrainConfig,
    state: TrainState,
    adam_step: u64,
    data_fingerprint: String,
    #[serde(default)]
    run_config: Option<serde_json::Value>,
}

/// Owns the parameters, optimizer and data stream of one training run.
pub struct Trainer {
    pub model: SizeModel,
    pub config: TrainConfig,
    adam: Adam<f32>,
    state: TrainState,
    corpus: ItemCorpus,
    train: Vec<EncodedExample>,
    val: Vec<EncodedExample>,
    data_fingerprint: String,
    order: Vec<usize>,
    order_epoch: Option<u64>,
    log_path: Option<PathBuf>,
    checkpoint_path: Option<PathBuf>,
    started: Instant,
}

fn data_fingerprint(train: &[TrainingExample], val: &[TrainingExample]) -> String {
    let mut h = Sha256::new();
    for (tag, set) in [("train", train), ("val", val)] {
        h.update(tag.as_bytes());
        for e in set {
            h.update(e.buyer_id.as_bytes());
            h.update([0]);
            h.update(e.target_item().item_id.as_bytes());
            h.update([0]);
            h.update(e.target_day().to_le_bytes());
            h.update((e.label_id as u64).to_le_bytes());
            h.update((e.history.len() as u64).to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Trainer {
    /// Prepares a run. The validation subsample is drawn once from the run
    /// seed; a set smaller than the cap is used whole.
    pub fn new(
        model: SizeModel,
        train: &[TrainingExample],
        val: &[TrainingExample],
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyDataset("training split is empty".into()));
        }
        if val.is_empty() {
            return Err(Error::EmptyDataset("validation split is empty".into()));
        }
        let adam = Adam::new(
            AdamConfig {
                lr: config.lr0,
                ..AdamConfig::default()
            },
            &model.params,
        );
        let state = TrainState {
            iteration: 0,
            epoch: 0,
            cursor: 0,
            schedule: ScheduleState::new(config.lr0),
            log: Vec::new(),
            window_loss: 0.0,
            window_steps: 0,
        };
        Self::assemble(model, config, adam, state, train, val)
    }

    fn assemble(
        model: SizeModel,
        config: TrainConfig,
        adam: Adam<f32>,
        state: TrainState,
        train: &[TrainingExample],
        val: &[TrainingExample],
    ) -> Result<Self> {
        let fingerprint = data_fingerprint(train, val);
        let mut corpus = ItemCorpus::new();
        let mut encode = |e: &TrainingExample| {
            corpus.encode_example(
                &e.history,
                e.target_item(),
                e.target_day(),
                e.label_id,
                &model.tokenizer,
                &model.config,
            )
        };
        let train_enc = train.iter().map(&mut encode).collect::<Result<Vec<_>>>()?;
        let mut val_idx: Vec<usize> = (0..val.len()).collect();
        if val.len() > config.val_sample {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(u64::MAX);
            val_idx.shuffle(&mut rng);
            val_idx.truncate(config.val_sample);
            val_idx.sort_unstable();
        }
        let val_enc = val_idx.iter().map(|&i| encode(&val[i])).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model,
            config,
            adam,
            state,
            corpus,
            train: train_enc,
            val: val_enc,
            data_fingerprint: fingerprint,
            order: Vec::new(),
            order_epoch: None,
            log_path: None,
            checkpoint_path: None,
            started: Instant::now(),
        })
    }

    /// Appends one CSV line per measurement to `path`.
    pub fn with_log(mut self, path: impl Into<PathBuf>) -> Self {
        self.log_path = Some(path.into());
        self
    }

    /// Saves a resumable checkpoint to `path` after every measurement.
    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn val_len(&self) -> usize {
        self.val.len()
    }

    fn reference(&self) -> TemporalReference {
        self.config.reference.into()
    }

    fn epoch_order(&mut self, epoch: u64) -> &[usize] {
        if self.order_epoch != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
            rng.set_stream(epoch);
            self.order = (0..self.train.len()).collect();
            self.order.shuffle(&mut rng);
            self.order_epoch = Some(epoch);
        }
        &self.order
    }

    /// Next batch of the continuous stream; batches may straddle epochs.
    fn next_batch(&mut self) -> Vec<usize> {
        let bs = self.config.batch_size;
        let mut out = Vec::with_capacity(bs);
        while out.len() < bs {
            let (epoch, cursor) = (self.state.epoch, self.state.cursor);
            let order = self.epoch_order(epoch);
            let take = (bs - out.len()).min(order.len() - cursor);
            out.extend_from_slice(&order[cursor..cursor + take]);
            self.state.cursor += take;
            if self.state.cursor == self.train.len() {
                self.state.epoch += 1;
                self.state.cursor = 0;
            }
        }
        out
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let idx = self.next_batch();
        let refs: Vec<&EncodedExample> = idx.iter().map(|&i| &self.train[i]).collect();
        let (loss, grads) = batch_loss(
            &self.model.params,
            &self.model.config,
            &self.corpus,
            &refs,
            self.reference(),
        )?;
        let loss = loss as f64;
        self.state.iteration += 1;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: self.state.iteration,
                reason: format!("training loss is {loss}"),
            });
        }
        self.adam.set_lr(self.state.schedule.lr);
        self.adam.step(&mut self.model.params, &grads).map_err(|e| Error::Diverged {
            iteration: self.state.iteration,
            reason: e.to_string(),
        })?;
        self.state.window_loss += loss;
        self.state.window_steps += 1;
        Ok(loss)
    }

    pub fn validation_loss(&self) -> Result<f64> {
        let refs: Vec<&EncodedExample> = self.val.iter().collect();
        mean_loss(
            &self.model.params,
            &self.model.config,
            &self.corpus,
            &refs,
            self.reference(),
            256,
        )
    }

    fn measure(&mut self) -> Result<()> {
        let val_loss = self.validation_loss()?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                iteration: self.state.iteration,
                reason: format!("validation loss is {val_loss}"),
            });
        }
        let train_loss = self.state.window_loss / self.state.window_steps.max(1) as f64;
        self.state.window_loss = 0.0;
        self.state.window_steps = 0;
        let entry = LogEntry {
            iteration: self.state.iteration,
            train_loss,
            val_loss,
            lr: self.state.schedule.lr,
            wallclock: self.started.elapsed().as_secs_f64(),
        };
        self.state.schedule = lr_schedule_step(
            val_loss,
            &self.state.schedule,
            self.config.patience,
            self.config.halving_factor,
        );
        if let Some(p) = &self.log_path {
            let fresh = !p.exists();
            let mut f = OpenOptions::new().create(true).append(true).open(p)?;
            if fresh {
                writeln!(f, "iter,train_loss,val_loss,lr,wallclock")?;
            }
            writeln!(
                f,
                "{},{},{},{},{:.3}",
                entry.iteration, entry.train_loss, entry.val_loss, entry.lr, entry.wallclock
            )?;
        }
        self.state.log.push(entry);
        if let Some(p) = self.checkpoint_path.clone() {
            self.save_checkpoint(&p)?;
        }
        Ok(())
    }

    /// Trains until the learning rate drops below the floor or the iteration
    /// cap is reached. A non-finite loss aborts; the last saved checkpoint
    /// is left untouched.
    pub fn run(&mut self) -> Result<TrainReport> {
        loop {
            if self.state.schedule.halted(self.config.lr_floor) {
                return Ok(self.report(StopReason::LearningRateFloor));
            }
            if self.config.max_iterations.is_some_and(|m| self.state.iteration >= m) {
                return Ok(self.report(StopReason::MaxIterations));
            }
            self.step()?;
            if self.state.iteration % self.config.eval_every == 0 {
                self.measure()?;
            }
        }
    }

    fn report(&self, stop: StopReason) -> TrainReport {
        TrainReport {
            iterations: self.state.iteration,
            stop,
            log: self.state.log.clone(),
        }
    }

    pub fn into_model(self) -> SizeModel {
        self.model
    }

    /// Wallclock times are left out so that equal runs give equal bytes;
    /// the CSV log keeps them.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let mut state = self.state.clone();
        for e in &mut state.log {
            e.wallclock = 0.0;
        }
        let header = TrainHeader {
            config: self.model.config.clone(),
            tokenizer: self.model.tokenizer.to_text(),
            sizes: self.model.sizes.labels().to_vec(),
            train: self.config.clone(),
            state,
            adam_step: self.adam.step_count(),
            data_fingerprint: self.data_fingerprint.clone(),
            run_config: self.model.run_config.clone(),
        };
        let mut tensors: Vec<(String, &Tensor<f32>)> = named_tensors(&self.model.params);
        let names: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
        let (m, v) = self.adam.moments();
        for (n, t) in names.iter().zip(m) {
            tensors.push((format!("adam.m.{n}"), t));
        }
        for (n, t) in names.iter().zip(v) {
            tensors.push((format!("adam.v.{n}"), t));
        }
        checkpoint::encode(TRAIN_MAGIC, &header, &tensors)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::write_file(path, &self.checkpoint_bytes()?)
    }

    /// Restores a run from a checkpoint. The data must be the same the run
    /// started with.
    pub fn resume(path: &Path, train: &[TrainingExample], val: &[TrainingExample]) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let dec = checkpoint::decode::<TrainHeader>(TRAIN_MAGIC, &bytes)?;
        let h = dec.header;
        if data_fingerprint(train, val) != h.data_fingerprint {
            return Err(Error::Checkpoint("training data differs from the checkpointed run".into()));
        }
        let n = dec.tensors.len() / 3;
        if dec.tensors.len() != 3 * n {
            return Err(Error::Checkpoint("malformed optimizer state".into()));
        }
        let mut tensors = dec.tensors;
        let second: Vec<Tensor<f32>> = tensors.split_off(2 * n).into_iter().map(|(_, t)| t).collect();
        let first: Vec<Tensor<f32>> = tensors.split_off(n).into_iter().map(|(_, t)| t).collect();
        let mut params = ModelParams::init(&h.config, 0)?;
        checkpoint::assign(&mut params, &tensors)?;
        let mut model = SizeModel::from_parts(
            h.config,
            params,
            BpeVocab::from_text(&h.tokenizer)?,
            SizeVocabulary::from_labels(h.sizes)?,
        )?;
        model.run_config = h.run_config;
        let adam = Adam::from_parts(
            AdamConfig {
                lr: h.state.schedule.lr,
                ..AdamConfig::default()
            },
            h.adam_step,
            first,
            second,
        )?;
        Self::assemble(model, h.train, adam, h.state, train, val)
    }
}
