//! Decision readout, the training objectives and the optimizer loop.

mod model;

pub use model::{
    build_bases, readout_logit, readout_prob, DraftModel, BASE_PREFIX, EXTRACTOR_PREFIX, REASONER_PREFIX,
};

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::latent::Insertion;
use crate::optim::{average_grads, Adam, AdamConfig};
use crate::params::{Group, ParamStore};
use crate::trajgen::TrajectoryExample;
use crate::{derive_seed, parallel, rng_from_seed, Error, Result, Tensor};

pub const HEAD_W: &str = "head.w";
pub const HEAD_B: &str = "head.b";

const ORDER_SALT: u64 = 0x0bde;

/// Linear-sigmoid readout on the terminal hidden state. `w` is stored as a
/// `d_r × 1` column and `b` as a `1 × 1` scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadoutHead {
    pub d_r: usize,
}

impl ReadoutHead {
    /// Fresh zero initialization: the untrained judge outputs 0.5.
    pub fn init(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(HEAD_W, Group::Head, Tensor::zeros(&[self.d_r, 1]))?;
        store.insert(HEAD_B, Group::Head, Tensor::zeros(&[1, 1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    OneStage,
    Decoupled,
    ExplicitBaseline,
    NoExtractor,
    NoReasoner,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::OneStage,
        Mode::Decoupled,
        Mode::ExplicitBaseline,
        Mode::NoExtractor,
        Mode::NoReasoner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::OneStage => "one_stage",
            Mode::Decoupled => "decoupled",
            Mode::ExplicitBaseline => "explicit_baseline",
            Mode::NoExtractor => "no_extractor",
            Mode::NoReasoner => "no_reasoner",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }

    /// Whether the forward pass builds a latent draft.
    pub fn uses_draft(self) -> bool {
        matches!(self, Mode::Decoupled | Mode::NoReasoner)
    }

    /// The groups that receive gradient in this mode.
    pub fn trainable_groups(self, insertion: Insertion) -> Vec<Group> {
        let extractor_side = [
            Group::ExtractorAdapter,
            Group::Queries,
            Group::ProjectorToExtractor,
            Group::ProjectorToReasoner,
        ];
        let mut groups = match self {
            Mode::OneStage | Mode::NoExtractor | Mode::ExplicitBaseline => {
                vec![Group::ReasonerAdapter, Group::Head]
            }
            Mode::Decoupled => {
                let mut g = vec![Group::ReasonerAdapter, Group::Head];
                g.extend(extractor_side);
                g
            }
            Mode::NoReasoner => {
                let mut g = vec![Group::Head];
                g.extend(extractor_side);
                g
            }
        };
        if self.uses_draft() && insertion == Insertion::PrefixDec {
            groups.push(Group::DecisionToken);
        }
        groups.sort();
        groups
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l_s: usize,
    pub insertion: Insertion,
    pub threshold: f64,
    pub adapter_rank: usize,
    pub adapter_alpha: f64,
    /// Validation accuracy is recorded every this many steps and at the end;
    /// 0 records only the end.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Decoupled,
            lr: 3e-3,
            steps: 500,
            batch_size: 8,
            seed: 0,
            l_s: 16,
            insertion: Insertion::Tail,
            threshold: 0.5,
            adapter_rank: 4,
            adapter_alpha: 8.0,
            eval_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0,1)", self.threshold)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.l_s == 0 {
            return Err(Error::Config("l_s must be at least 1".into()));
        }
        if self.adapter_rank == 0 {
            return Err(Error::Config("adapter_rank must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be finite and non-negative", self.lr)));
        }
        Ok(())
    }
}

/// 1 (unsafe) when `p ≥ tau`, so a tie resolves to unsafe.
pub fn classify(p: f64, tau: f64) -> u8 {
    u8::from(p >= tau)
}

/// Clamped binary cross-entropy of a probability against a label.
pub fn bce_loss(p: f64, y: u8) -> f64 {
    crate::numerics::bce_value(p, f64::from(y))
}

/// Unsafe probability of every example, in input order.
pub fn predict_probs(model: &DraftModel, examples: &[TrajectoryExample]) -> Result<Vec<f64>> {
    parallel::map_collect(examples, |ex| model.prob(&ex.tokens))
        .into_iter()
        .collect()
}

pub fn accuracy(model: &DraftModel, examples: &[TrajectoryExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Usage("accuracy of an empty set".into()));
    }
    let probs = predict_probs(model, examples)?;
    let correct = probs
        .iter()
        .zip(examples)
        .filter(|(p, ex)| classify(**p, model.config.threshold) == ex.label)
        .count();
    Ok(correct as f64 / examples.len() as f64)
}

/// One optimizer step of the model's own mode over `batch`; returns the
/// mean loss before the update. Any gradient reaching a group outside the
/// mode's trainable set, or any change to a frozen group, is an invariant
/// violation.
pub fn train_step(model: &mut DraftModel, adam: &mut Adam, batch: &[&TrajectoryExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let trainable = model.trainable_groups();
    let frozen: Vec<Group> = Group::ALL.into_iter().filter(|g| !trainable.contains(g)).collect();
    let before: Vec<String> = frozen.iter().map(|&g| model.store.checksum(g)).collect();

    let results = parallel::map_collect(batch, |ex| model.loss_and_grads(&ex.tokens, ex.label));
    let mut losses = Vec::with_capacity(batch.len());
    let mut grads = Vec::with_capacity(batch.len());
    for r in results {
        let (loss, g) = r?;
        losses.push(loss);
        grads.push(g);
    }
    let mean = losses.iter().sum::<f64>() / losses.len() as f64;
    if !mean.is_finite() {
        let ids: Vec<&str> = batch.iter().map(|ex| ex.id.as_str()).collect();
        return Err(Error::NanLoss {
            step: adam.steps_taken() as usize,
            batch: ids.join(","),
        });
    }
    let avg = average_grads(grads);
    for (g, p) in avg.iter().zip(model.store.entries()) {
        if g.is_some() && !trainable.contains(&p.group) {
            return Err(Error::Invariant(format!(
                "{} ({}) received a gradient in mode {}",
                p.name, p.group, model.config.mode
            )));
        }
    }
    adam.step(&mut model.store, &avg)?;
    for (&g, old) in frozen.iter().zip(&before) {
        if model.store.checksum(g) != *old {
            return Err(Error::Invariant(format!(
                "frozen group {g} changed in mode {}",
                model.config.mode
            )));
        }
    }
    Ok(mean)
}

/// Single-adapter objective: the reasoner reads the bare trajectory.
pub fn one_stage_step(model: &mut DraftModel, adam: &mut Adam, batch: &[&TrajectoryExample]) -> Result<f64> {
    if !matches!(model.config.mode, Mode::OneStage | Mode::NoExtractor) {
        return Err(Error::Usage(format!(
            "one_stage_step on a {} model",
            model.config.mode
        )));
    }
    train_step(model, adam, batch)
}

/// Joint extractor and reasoner objective through the latent draft.
pub fn decoupled_step(model: &mut DraftModel, adam: &mut Adam, batch: &[&TrajectoryExample]) -> Result<f64> {
    if model.config.mode != Mode::Decoupled {
        return Err(Error::Usage(format!(
            "decoupled_step on a {} model",
            model.config.mode
        )));
    }
    train_step(model, adam, batch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_accuracy: Option<f64>,
}

pub fn new_optimizer(model: &DraftModel) -> Adam {
    Adam::new(
        AdamConfig {
            lr: model.config.lr,
            ..AdamConfig::default()
        },
        &model.store,
    )
}

/// Runs `config.steps` optimizer steps of the model's mode over shuffled
/// epochs of `train`. Validation accuracy on `val` is recorded per
/// `eval_every` and after the final step.
pub fn train(
    model: &mut DraftModel,
    train: &[TrajectoryExample],
    val: &[TrajectoryExample],
) -> Result<Vec<HistoryRecord>> {
    model.config.validate()?;
    if train.is_empty() {
        return Err(Error::Usage("empty training set".into()));
    }
    let train_ids: HashSet<&str> = train.iter().map(|e| e.id.as_str()).collect();
    if let Some(dup) = val.iter().find(|e| train_ids.contains(e.id.as_str())) {
        return Err(Error::Usage(format!(
            "example {} appears in both train and validation sets",
            dup.id
        )));
    }
    if model.config.mode == Mode::ExplicitBaseline {
        model.prepare_summaries(train.iter().chain(val))?;
    }
    let mut adam = new_optimizer(model);
    let mut rng = rng_from_seed(derive_seed(model.config.seed, ORDER_SALT));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();
    let steps = model.config.steps;
    let mut history = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut batch = Vec::with_capacity(model.config.batch_size);
        while batch.len() < model.config.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train[order[cursor]]);
            cursor += 1;
        }
        let loss = train_step(model, &mut adam, &batch).map_err(|e| match e {
            Error::NanLoss { batch, .. } => Error::NanLoss { step, batch },
            other => other,
        })?;
        let last = step + 1 == steps;
        let every = model.config.eval_every;
        let val_accuracy = if !val.is_empty() && (last || (every > 0 && (step + 1) % every == 0)) {
            Some(accuracy(model, val)?)
        } else {
            None
        };
        history.push(HistoryRecord {
            step,
            loss,
            val_accuracy,
        });
    }
    Ok(history)
}

pub fn history_to_jsonl(history: &[HistoryRecord]) -> String {
    let mut out = String::new();
    for h in history {
        out.push_str(&serde_json::to_string(h).expect("record serializes"));
        out.push('\n');
    }
    out
}
