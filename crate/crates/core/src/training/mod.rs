//! Stage-1 reward fitting, Stage-2 ranker optimization and the shared
//! minibatch loop used by every trainer.

mod report;
mod stage1;
mod stage2;

pub use report::{BoundCheck, EpochRecord, TrainReport};
pub use stage1::{reward_loss, train_reward};
pub use stage2::{stage2_objective, train_ranker, Stage2Terms};

pub(crate) use stage2::hard_rewards;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{EncoderConfig, ModelConfig, ParamStore};
use crate::optim::{AdamW, AdamWConfig};
use crate::rng::global_stream;
use crate::tensor::Tensor;

/// Global stream ids, kept disjoint so that e.g. changing the epoch count
/// never changes initialization.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_SHUFFLE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    SquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Query groups per minibatch.
    pub batch_size: usize,
    /// Misspecification strength; 0 disables the correction.
    pub lambda: f64,
    pub tau: f64,
    pub seed: u64,
    pub use_ste: bool,
    pub loss: LossKind,
    /// 1-based epoch from which the learning rate is halved.
    pub lr_decay_epoch: Option<usize>,
    pub optimizer: AdamWConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 10,
            batch_size: 32,
            lambda: 0.0,
            tau: 1.0,
            seed: 0,
            use_ste: false,
            loss: LossKind::SquaredError,
            lr_decay_epoch: None,
            optimizer: AdamWConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::contract("epochs and batch size must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain(format!("lambda must be finite and non-negative, got {}", self.lambda)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::domain(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::domain(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        self.encoder.validate()
    }

    /// Learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.lr_decay_epoch {
            Some(e) if epoch >= e => self.lr * 0.5,
            _ => self.lr,
        }
    }

    /// Model shape for data drawn from `dataset`'s world.
    pub fn model_config(&self, dataset: &Dataset) -> ModelConfig {
        ModelConfig {
            query_dim: dataset.world.model_query_dim(),
            item_dim: dataset.world.model_item_dim(),
            max_len: dataset.world.list_len,
            encoder: self.encoder.clone(),
        }
    }
}

/// Misspecification weight `clamp(1 - λ |y - g|, 0, 1)`; a plain number,
/// so no gradient reaches the reward model through it.
pub fn misspec_weight(label: f64, g_logged: f64, lambda: f64) -> f64 {
    (1.0 - lambda * (label - g_logged).abs()).clamp(0.0, 1.0)
}

pub(crate) fn check_nonempty(ds: &Dataset, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::contract(format!("{what} dataset is empty")));
    }
    Ok(())
}

/// Result of one minibatch: mean loss, mean gradients and per-group extras.
pub(crate) struct BatchOutput<A> {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub aux: Vec<A>,
}

/// Evaluates `f` on every item with its own tape, in parallel, and reduces
/// losses and gradients in item order so the result does not depend on
/// scheduling.
pub(crate) fn batch_gradients<'a, T, A, F>(store: &'a ParamStore, items: &[T], f: F) -> Result<BatchOutput<A>>
where
    T: Sync,
    A: Send,
    F: Fn(&mut Tape<'a>, &[Var], &T) -> Result<(Var, A)> + Sync,
{
    let per_item: Vec<(f64, Vec<Tensor>, A)> = items
        .par_iter()
        .map(|item| {
            let mut tape = Tape::new();
            let bound: Vec<Var> = store.tensors().map(|t| tape.param_ref(t)).collect();
            let (loss, aux) = f(&mut tape, &bound, item)?;
            let grads = tape.backward(loss)?;
            let value = tape.scalar_value(loss);
            Ok((value, bound.iter().map(|&v| grads.wrt(v)).collect(), aux))
        })
        .collect::<Result<_>>()?;
    let mut aux = Vec::with_capacity(per_item.len());
    let mut parts = Vec::with_capacity(per_item.len());
    for (l, g, a) in per_item {
        parts.push((l, g));
        aux.push(a);
    }
    let (loss, grads) = mean_reduce(store, parts);
    Ok(BatchOutput { loss, grads, aux })
}

/// Averages per-item `(loss, gradients)` in order.
pub(crate) fn mean_reduce(store: &ParamStore, parts: Vec<(f64, Vec<Tensor>)>) -> (f64, Vec<Tensor>) {
    let n = parts.len().max(1) as f64;
    let mut grads: Vec<Tensor> = store.tensors().map(|t| Tensor::zeros(t.shape())).collect();
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    for g in &mut grads {
        for x in g.data_mut() {
            *x /= n;
        }
    }
    (loss / n, grads)
}

/// Validation summary: `selection` is minimized for model selection.
pub(crate) struct Validation {
    pub selection: f64,
    pub metrics: Vec<(&'static str, &'static str, f64)>,
}

/// Everything the generic loop needs from a trainer.
pub(crate) trait Trainee: Clone {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
}

impl Trainee for crate::models::RewardModel {
    fn store(&self) -> &ParamStore {
        self.params()
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        self.params_mut()
    }
}

impl Trainee for crate::models::RankerModel {
    fn store(&self) -> &ParamStore {
        self.params()
    }
    fn store_mut(&mut self) -> &mut ParamStore {
        self.params_mut()
    }
}

/// Index of a minibatch within a run, used to derive sampling streams.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepIndex {
    pub step: u64,
}

/// Shuffled minibatch loop with best-validation model selection.
pub(crate) fn fit<M, S, V>(mut model: M, n_train: usize, cfg: &TrainConfig, what: &str, mut step: S, mut validate: V) -> Result<(M, TrainReport)>
where
    M: Trainee,
    S: FnMut(&M, &[usize], StepIndex) -> Result<(f64, Vec<Tensor>)>,
    V: FnMut(&M) -> Result<Validation>,
{
    cfg.validate()?;
    if n_train == 0 {
        return Err(Error::contract(format!("{what}: empty training set")));
    }
    let mut opt = AdamW::new(model.store(), cfg.optimizer.clone());
    let mut shuffle_rng = global_stream(cfg.seed, STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, M)> = None;
    let mut global_step = 0u64;
    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, grads) = step(&model, batch, StepIndex { step: global_step })?;
            global_step += 1;
            if !loss.is_finite() || !grads.iter().all(Tensor::all_finite) {
                return Err(Error::Numerical {
                    epoch,
                    message: format!("{what}: non-finite loss or gradient ({loss})"),
                });
            }
            opt.step(model.store_mut(), &grads, lr)?;
            if !model.store().all_finite() {
                return Err(Error::Numerical {
                    epoch,
                    message: format!("{what}: parameters became non-finite"),
                });
            }
            loss_sum += loss;
            batches += 1;
        }
        let val = validate(&model)?;
        if !val.selection.is_finite() {
            return Err(Error::Numerical {
                epoch,
                message: format!("{what}: non-finite validation score"),
            });
        }
        let train_loss = loss_sum / batches as f64;
        log::info!("{what} epoch {epoch}/{}: train loss {train_loss:.6}, selection {:.6}", cfg.epochs, val.selection);
        report.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            metrics: val.metrics.iter().map(|&(s, m, v)| (s.to_string(), m.to_string(), v)).collect(),
        });
        if best.as_ref().is_none_or(|(b, _)| val.selection < *b) {
            report.best_epoch = epoch;
            best = Some((val.selection, model.clone()));
        }
    }
    let (_, best_model) = best.expect("at least one epoch");
    Ok((best_model, report))
}
