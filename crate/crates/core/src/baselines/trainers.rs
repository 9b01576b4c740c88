use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pg_rank_step, relaxed_ndcg_loss, urcc_pairs, urcc_surrogate, PlackettLuceSampler};
use crate::autodiff::Tape;
use crate::data::{Dataset, QueryGroup};
use crate::error::{Error, Result};
use crate::models::{RankerModel, RewardModel};
use crate::rng::{global_stream, group_stream, mix64};
use crate::softsort::hard_permutation;
use crate::training::{batch_gradients, check_nonempty, fit, hard_rewards, mean_reduce, StepIndex, TrainConfig, TrainReport, Validation, STREAM_INIT};

/// Per-item gains the relaxed-NDCG learner regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NaiveTarget {
    /// Position-free relevance `sigmoid(R)`.
    Relevance,
    /// Click probability at the logged position, `P(E_pos) sigmoid(R)`.
    #[default]
    LoggedClick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UrccInit {
    /// Start from the trained relaxed-NDCG ranker.
    #[default]
    Naive,
    Scratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub naive_target: NaiveTarget,
    pub sampler: PlackettLuceSampler,
    pub urcc_init: UrccInit,
}

fn naive_gains(g: &QueryGroup, target: NaiveTarget, ds: &Dataset) -> Result<Vec<f64>> {
    let rel = g.relevance();
    Ok(match target {
        NaiveTarget::Relevance => rel,
        NaiveTarget::LoggedClick => {
            let pos = g.logged.positions();
            let exam = ds.world.examination.examination();
            rel.iter().zip(pos).map(|(r, p)| r * exam[p]).collect()
        }
    })
}

fn new_ranker(train: &Dataset, cfg: &TrainConfig) -> Result<RankerModel> {
    RankerModel::new(&cfg.model_config(train), &mut global_stream(cfg.seed, STREAM_INIT))
}

fn check_reward(reward: &RewardModel, ds: &Dataset) -> Result<()> {
    let w = &ds.world;
    let c = reward.config();
    if c.query_dim != w.model_query_dim() || c.item_dim != w.model_item_dim() || c.max_len < w.list_len {
        return Err(Error::contract("reward model does not match the dataset's feature layout"));
    }
    Ok(())
}

/// Relaxed-NDCG ranker trained on per-item targets, selected by validation loss.
pub fn train_naive(train: &Dataset, val: &Dataset, cfg: &TrainConfig, target: NaiveTarget) -> Result<(RankerModel, TrainReport)> {
    check_nonempty(train, "naive training")?;
    check_nonempty(val, "naive validation")?;
    cfg.validate()?;
    let train_in = train.model_inputs();
    let val_in = val.model_inputs();
    let train_gains: Vec<Vec<f64>> = train.groups.iter().map(|g| naive_gains(g, target, train)).collect::<Result<_>>()?;
    let val_gains: Vec<Vec<f64>> = val.groups.iter().map(|g| naive_gains(g, target, val)).collect::<Result<_>>()?;

    let step = |m: &RankerModel, batch: &[usize], _| {
        let out = batch_gradients(m.params(), batch, |tape, bound, &i| {
            let q = tape.constant_ref(&train_in[i].query);
            let it = tape.constant_ref(&train_in[i].items);
            let s = m.forward(tape, bound, q, it)?;
            Ok((relaxed_ndcg_loss(tape, s, &train_gains[i], cfg.tau)?, ()))
        })?;
        Ok((out.loss, out.grads))
    };
    let validate = |m: &RankerModel| {
        let losses: Vec<f64> = (0..val.len())
            .into_par_iter()
            .map(|i| {
                let mut tape = Tape::new();
                let bound = m.bind(&mut tape, false);
                let q = tape.constant_ref(&val_in[i].query);
                let it = tape.constant_ref(&val_in[i].items);
                let s = m.forward(&mut tape, &bound, q, it)?;
                let l = relaxed_ndcg_loss(&mut tape, s, &val_gains[i], cfg.tau)?;
                Ok(tape.scalar_value(l))
            })
            .collect::<Result<_>>()?;
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        Ok(Validation {
            selection: loss,
            metrics: vec![("val", "loss", loss)],
        })
    };
    fit(new_ranker(train, cfg)?, train.len(), cfg, "naive", step, validate)
}

fn reward_validation(m: &RankerModel, reward: &RewardModel, val_in: &[crate::data::ModelInputs]) -> Result<Validation> {
    let hard = hard_rewards(m, reward, val_in)?;
    let mean = hard.iter().sum::<f64>() / hard.len() as f64;
    Ok(Validation {
        selection: -mean,
        metrics: vec![("val", "hard_reward", mean)],
    })
}

/// Sampling stream for one group at one optimization step.
fn step_stream(seed: u64, at: StepIndex, group_id: u64) -> rand_chacha::ChaCha8Rng {
    group_stream(seed ^ mix64(at.step.wrapping_add(1)), group_id)
}

/// Plackett-Luce REINFORCE against the frozen reward model.
pub fn train_pgrank(train: &Dataset, val: &Dataset, reward: &RewardModel, cfg: &TrainConfig, sampler: &PlackettLuceSampler) -> Result<(RankerModel, TrainReport)> {
    check_nonempty(train, "pg-rank training")?;
    check_nonempty(val, "pg-rank validation")?;
    check_reward(reward, train)?;
    sampler.validate()?;
    cfg.validate()?;
    let train_in = train.model_inputs();
    let val_in = val.model_inputs();
    let step = |m: &RankerModel, batch: &[usize], at: StepIndex| {
        let parts: Vec<(f64, Vec<_>)> = batch
            .par_iter()
            .map(|&i| {
                let mut rng = step_stream(cfg.seed, at, train.groups[i].group_id);
                let (mut grads, mean_reward) = pg_rank_step(m, reward, &train_in[i], sampler, &mut rng)?;
                // Ascent direction to descent gradient.
                for g in &mut grads {
                    for x in g.data_mut() {
                        *x = -*x;
                    }
                }
                Ok((-mean_reward, grads))
            })
            .collect::<Result<_>>()?;
        Ok(mean_reduce(m.params(), parts))
    };
    let validate = |m: &RankerModel| reward_validation(m, reward, &val_in);
    fit(new_ranker(train, cfg)?, train.len(), cfg, "pg-rank", step, validate)
}

/// Pairwise learner over the swap neighborhood of the current ranking.
/// `init` is the starting ranker (e.g. a trained naive model); `None`
/// starts from scratch.
pub fn train_urcc(train: &Dataset, val: &Dataset, reward: &RewardModel, cfg: &TrainConfig, init: Option<RankerModel>) -> Result<(RankerModel, TrainReport)> {
    check_nonempty(train, "urcc training")?;
    check_nonempty(val, "urcc validation")?;
    check_reward(reward, train)?;
    cfg.validate()?;
    let train_in = train.model_inputs();
    let val_in = val.model_inputs();
    let start = match init {
        Some(m) => {
            if m.config() != &new_ranker(train, cfg)?.config().clone() {
                return Err(Error::contract("initial ranker does not match the configured model shape"));
            }
            m
        }
        None => new_ranker(train, cfg)?,
    };
    let step = |m: &RankerModel, batch: &[usize], _| {
        let out = batch_gradients(m.params(), batch, |tape, bound, &i| {
            let x = &train_in[i];
            let q = tape.constant_ref(&x.query);
            let it = tape.constant_ref(&x.items);
            let s = m.forward(tape, bound, q, it)?;
            let current = hard_permutation(tape.value(s).data());
            let pairs = urcc_pairs(&current, |p| reward.predict(x.query.data(), &x.items, p))?;
            let n_pairs = pairs.len();
            if n_pairs == 0 {
                let zero = tape.scale(s, 0.0);
                return Ok((tape.sum(zero), 0));
            }
            let mut total = urcc_surrogate(tape, s, &pairs[0])?;
            for p in &pairs[1..] {
                let l = urcc_surrogate(tape, s, p)?;
                total = tape.add(total, l)?;
            }
            Ok((tape.scale(total, 1.0 / n_pairs as f64), n_pairs))
        })?;
        Ok((out.loss, out.grads))
    };
    let validate = |m: &RankerModel| reward_validation(m, reward, &val_in);
    fit(start, train.len(), cfg, "urcc", step, validate)
}
