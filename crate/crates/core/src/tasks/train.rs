//! Shared optimization loop.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::encode::Vocabularies;
use super::vocab::Vocab;
use super::TaskError;
use crate::nn::{
    adam_step, warmup_lr, AdamState, Checkpoint, ForwardCtx, GradBuffer, Graph, LrSchedule, Model, ModelSpec, NnError,
    RngState, StackMode, Var,
};
use crate::posenc::{PeConfig, PeVariant, SprmMode};
use crate::rng::rng_for;

fn default_batch() -> usize {
    16
}

fn default_warmup() -> u64 {
    4000
}

fn default_lr_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_warmup")]
    pub warmup_steps: u64,
    /// Multiplier on the warmup schedule.
    #[serde(default = "default_lr_scale")]
    pub lr_scale: f64,
    /// Checkpoint interval in steps; 0 keeps only the final one.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Minimum training-set count for a vocabulary entry.
    #[serde(default = "default_min_count")]
    pub min_count: usize,
}

fn default_min_count() -> usize {
    1
}

impl TrainConfig {
    pub fn new(steps: u64, batch_size: usize, warmup_steps: u64) -> Self {
        TrainConfig { steps, batch_size, warmup_steps, lr_scale: 1.0, checkpoint_every: 0, min_count: 1 }
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.steps == 0 || self.batch_size == 0 || self.warmup_steps == 0 {
            return Err(TaskError::Config("steps, batch_size and warmup_steps must be positive".into()));
        }
        if !(self.lr_scale > 0.0) || !self.lr_scale.is_finite() {
            return Err(TaskError::Config(format!("lr_scale must be positive, got {}", self.lr_scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    /// Mean per-token loss of the step's batch.
    pub loss: f64,
}

/// Result of a training run. When `diverged_at` is set the model holds the
/// parameters from the last completed step.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub log: Vec<LogRow>,
    pub optimizer: AdamState,
    pub diverged_at: Option<u64>,
    pub steps_done: u64,
}

/// Builds the summed loss of one example; returns the loss node and the
/// number of predicted tokens it covers.
pub type ExampleLoss<'a> = dyn FnMut(&Model, &mut Graph, usize, &mut ForwardCtx) -> Result<(Var, usize), TaskError> + 'a;

/// Adam with warmup over shuffled epochs. Per-example gradients are summed
/// in batch order, then divided by the batch's token count.
pub fn run_training(
    model: &mut Model,
    n_examples: usize,
    cfg: &TrainConfig,
    seed: u64,
    example_loss: &mut ExampleLoss<'_>,
    on_checkpoint: &mut dyn FnMut(u64, &Model, &AdamState),
) -> Result<TrainRun, TaskError> {
    cfg.validate()?;
    if n_examples == 0 {
        return Err(TaskError::Data("no training examples".into()));
    }
    let schedule = LrSchedule::new(model.spec.d_model, cfg.warmup_steps);
    let mut opt = AdamState::new(&model.params);
    let mut log = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0;
    let mut example_counter = 0u64;
    let p = model.spec.dropout_p;

    for step in 1..=cfg.steps {
        let mut grads = GradBuffer::zeros(&model.params);
        let mut loss = 0.0;
        let mut tokens = 0;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order = (0..n_examples).collect();
                order.shuffle(&mut rng_for(seed, "epoch", epoch));
                epoch += 1;
                cursor = 0;
            }
            let idx = order[cursor];
            cursor += 1;
            let mut ctx = ForwardCtx::train(p, rng_for(seed, "dropout", example_counter));
            example_counter += 1;
            let mut g = Graph::new();
            let (out, n_tok) = example_loss(model, &mut g, idx, &mut ctx)?;
            loss += g.value(out).data()[0];
            tokens += n_tok;
            let gr = g.backward(out);
            grads.accumulate(&g, &gr);
        }
        let tokens = tokens.max(1);
        loss /= tokens as f64;
        let lr = cfg.lr_scale * warmup_lr(step, &schedule)?;
        if !loss.is_finite() {
            return Ok(TrainRun { log, optimizer: opt, diverged_at: Some(step), steps_done: step - 1 });
        }
        grads.scale(1.0 / tokens as f64);
        match adam_step(&mut model.params, &grads, &mut opt, lr) {
            Ok(()) => {}
            Err(NnError::NonFiniteGradient(_)) => {
                return Ok(TrainRun { log, optimizer: opt, diverged_at: Some(step), steps_done: step - 1 });
            }
            Err(e) => return Err(e.into()),
        }
        log.push(LogRow { step, lr, loss });
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step != cfg.steps {
            on_checkpoint(step, model, &opt);
        }
    }
    Ok(TrainRun { log, optimizer: opt, diverged_at: None, steps_done: cfg.steps })
}

/// Training log as CSV (`step,lr,loss`).
pub fn log_csv(log: &[LogRow]) -> String {
    let mut s = String::from("step,lr,loss\n");
    for r in log {
        s.push_str(&format!("{},{:.6e},{:.6}\n", r.step, r.lr, r.loss));
    }
    s
}

fn default_heads() -> usize {
    6
}

fn default_dropout() -> f64 {
    0.2
}

fn default_base() -> f64 {
    10000.0
}

fn default_clip() -> usize {
    8
}

fn default_max_len() -> usize {
    256
}

/// Architecture without vocabulary sizes; those come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: PeVariant,
    pub n_layers: usize,
    #[serde(default = "default_heads")]
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    #[serde(default = "default_dropout")]
    pub dropout_p: f64,
    #[serde(default = "default_base")]
    pub base: f64,
    #[serde(default = "default_clip")]
    pub clip_k: usize,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    #[serde(default)]
    pub use_bigram_stream: bool,
    #[serde(default)]
    pub sprm_mode: SprmMode,
    #[serde(default)]
    pub tie_embeddings: bool,
}

impl ModelConfig {
    pub fn new(variant: PeVariant, n_layers: usize, n_heads: usize, d_model: usize, d_ff: usize) -> Self {
        ModelConfig {
            variant,
            n_layers,
            n_heads,
            d_model,
            d_ff,
            dropout_p: default_dropout(),
            base: default_base(),
            clip_k: default_clip(),
            max_len: default_max_len(),
            use_bigram_stream: false,
            sprm_mode: SprmMode::default(),
            tie_embeddings: false,
        }
    }

    pub fn spec(&self, mode: StackMode, vocabs: &Vocabularies, n_classes: usize) -> Result<ModelSpec, TaskError> {
        let bigram_vocab_size = match (&vocabs.bigram, self.use_bigram_stream) {
            (Some(b), true) => b.len(),
            (None, true) => return Err(TaskError::Config("bigram stream enabled without a bigram vocabulary".into())),
            _ => 0,
        };
        let spec = ModelSpec {
            mode,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_model: self.d_model,
            d_ff: self.d_ff,
            pe_config: PeConfig {
                variant: self.variant,
                d_model: self.d_model,
                base: self.base,
                clip_k: self.clip_k,
                max_len: self.max_len,
            },
            dropout_p: self.dropout_p,
            vocab_size: vocabs.unigram.len(),
            bigram_vocab_size,
            use_bigram_stream: self.use_bigram_stream,
            target_vocab_size: vocabs.target.as_ref().map_or(0, Vocab::len),
            n_classes,
            sprm_mode: self.sprm_mode,
            tie_embeddings: self.tie_embeddings,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Checkpoint carrying the task name and vocabularies in `extra`.
pub fn task_checkpoint(
    model: &Model,
    optimizer: Option<&AdamState>,
    seed: u64,
    step: u64,
    task: &str,
    vocabs: &Vocabularies,
) -> Checkpoint {
    let mut c = Checkpoint::capture(model, optimizer, RngState { seed, step });
    c.extra.insert("task".into(), serde_json::Value::String(task.into()));
    c.extra.insert("vocabularies".into(), serde_json::to_value(vocabs).expect("vocab serializes"));
    c
}

pub fn checkpoint_vocabs(c: &Checkpoint) -> Result<Vocabularies, TaskError> {
    let v = c.extra.get("vocabularies").ok_or_else(|| TaskError::Data("checkpoint has no vocabularies".into()))?;
    serde_json::from_value(v.clone()).map_err(|e| TaskError::Data(format!("checkpoint vocabularies: {e}")))
}

pub fn checkpoint_task(c: &Checkpoint) -> Option<&str> {
    c.extra.get("task").and_then(|v| v.as_str())
}

/// Outcome of a task's training run.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    pub diverged_at: Option<u64>,
}

impl TrainedModel {
    pub(crate) fn finish(model: &Model, run: TrainRun, seed: u64, task: &str, vocabs: &Vocabularies) -> Self {
        let mut checkpoint = task_checkpoint(model, Some(&run.optimizer), seed, run.steps_done, task, vocabs);
        if let Some(s) = run.diverged_at {
            checkpoint.extra.insert("diverged_at".into(), serde_json::Value::from(s));
        }
        TrainedModel { checkpoint, log: run.log, diverged_at: run.diverged_at }
    }
}
