use rayon::prelude::*;

use super::stage1::predict_logged;
use super::{batch_gradients, check_nonempty, fit, misspec_weight, BoundCheck, TrainConfig, TrainReport, Validation, STREAM_INIT};
use crate::autodiff::{Tape, Var};
use crate::data::{Dataset, ModelInputs};
use crate::error::{Error, Result};
use crate::models::{RankerModel, RewardModel};
use crate::rng::global_stream;
use crate::softsort::{hard_permutation, soft_position_embed, softsort, ste_combine};

/// Tape nodes of one group's Stage-2 objective.
#[derive(Debug, Clone, Copy)]
pub struct Stage2Terms {
    /// Ranker scores, `[L]`.
    pub scores: Var,
    /// Predicted utility of the relaxed permutation.
    pub g: Var,
    /// Misspecification weight (a constant).
    pub weight: f64,
    /// `weight * g`, the quantity maximized.
    pub objective: Var,
}

/// Builds `w · g(q, items, Πᵀ P)` where `Π` relaxes the ranker's sort.
/// Gradients reach the ranker through the scores, `Π` and the position
/// rows; the reward model enters as constants.
#[allow(clippy::too_many_arguments)]
pub fn stage2_objective<'a>(
    tape: &mut Tape<'a>,
    ranker: &RankerModel,
    ranker_bound: &[Var],
    reward: &'a RewardModel,
    query: Var,
    items: Var,
    label: f64,
    g_logged: f64,
    cfg: &TrainConfig,
) -> Result<Stage2Terms> {
    let reward_bound = reward.bind(tape, false);
    let scores = ranker.forward(tape, ranker_bound, query, items)?;
    let pi = if cfg.use_ste {
        ste_combine(tape, scores, cfg.tau)?
    } else {
        softsort(tape, scores, cfg.tau)?
    };
    let len = tape.value(items).rows();
    let table = reward.positions_var(tape, &reward_bound, len)?;
    let pos = soft_position_embed(tape, pi, table)?;
    let g = reward.forward(tape, &reward_bound, query, items, pos)?;
    let weight = misspec_weight(label, g_logged, cfg.lambda);
    let objective = tape.scale(g, weight);
    Ok(Stage2Terms {
        scores,
        g,
        weight,
        objective,
    })
}

/// Per-group `(w·g, g)` values of the Stage-2 objective without gradients.
fn objective_values(ranker: &RankerModel, reward: &RewardModel, ds: &Dataset, inputs: &[ModelInputs], g_logged: &[f64], cfg: &TrainConfig) -> Result<Vec<(f64, f64)>> {
    (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let mut tape = Tape::new();
            let bound = ranker.bind(&mut tape, false);
            let q = tape.constant_ref(&inputs[i].query);
            let it = tape.constant_ref(&inputs[i].items);
            let t = stage2_objective(&mut tape, ranker, &bound, reward, q, it, ds.groups[i].label, g_logged[i], cfg)?;
            Ok((tape.scalar_value(t.objective), tape.scalar_value(t.g)))
        })
        .collect()
}

/// Reward-model utility of the ranker's hard order for each group.
pub(crate) fn hard_rewards(ranker: &RankerModel, reward: &RewardModel, inputs: &[ModelInputs]) -> Result<Vec<f64>> {
    inputs
        .par_iter()
        .map(|x| {
            let s = ranker.predict_scores(x.query.data(), &x.items)?;
            reward.predict(x.query.data(), &x.items, &hard_permutation(&s))
        })
        .collect()
}

/// Maximizes the batch mean of `w · g` over ranker parameters with the
/// reward model frozen; keeps the epoch with the best validation objective.
pub fn train_ranker(train: &Dataset, val: &Dataset, reward: &RewardModel, cfg: &TrainConfig) -> Result<(RankerModel, TrainReport)> {
    check_nonempty(train, "ranker training")?;
    check_nonempty(val, "ranker validation")?;
    cfg.validate()?;
    let model_cfg = cfg.model_config(train);
    if reward.config().query_dim != model_cfg.query_dim || reward.config().item_dim != model_cfg.item_dim || reward.config().max_len < model_cfg.max_len {
        return Err(Error::contract("reward model does not match the dataset's feature layout"));
    }
    let ranker = RankerModel::new(&model_cfg, &mut global_stream(cfg.seed, STREAM_INIT))?;
    train_ranker_from(ranker, train, val, reward, cfg)
}

/// Stage 2 starting from an existing ranker.
fn train_ranker_from(ranker: RankerModel, train: &Dataset, val: &Dataset, reward: &RewardModel, cfg: &TrainConfig) -> Result<(RankerModel, TrainReport)> {
    let train_in = train.model_inputs();
    let val_in = val.model_inputs();
    let train_logged = predict_logged(reward, train, &train_in)?;
    let val_logged = predict_logged(reward, val, &val_in)?;
    let val_logged_mean = val_logged.iter().sum::<f64>() / val.len() as f64;
    let mut bound_check = BoundCheck::default();

    let step = |m: &RankerModel, batch: &[usize], _| {
        let out = batch_gradients(m.params(), batch, |tape, bound, &i| {
            let q = tape.constant_ref(&train_in[i].query);
            let it = tape.constant_ref(&train_in[i].items);
            let t = stage2_objective(tape, m, bound, reward, q, it, train.groups[i].label, train_logged[i], cfg)?;
            let g = tape.scalar_value(t.g);
            Ok((tape.neg(t.objective), (t.weight * g, g)))
        })?;
        let (wg, g) = out.aux.iter().fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
        bound_check.batches += 1;
        if wg > g {
            bound_check.violations += 1;
            log::error!("weighted objective {wg} exceeds unweighted {g}");
        }
        Ok((out.loss, out.grads))
    };
    let validate = |m: &RankerModel| {
        let vals = objective_values(m, reward, val, &val_in, &val_logged, cfg)?;
        let n = vals.len() as f64;
        let objective = vals.iter().map(|v| v.0).sum::<f64>() / n;
        let soft_g = vals.iter().map(|v| v.1).sum::<f64>() / n;
        let hard = hard_rewards(m, reward, &val_in)?;
        let hard_g = hard.iter().sum::<f64>() / n;
        Ok(Validation {
            selection: -objective,
            metrics: vec![
                ("val", "objective", objective),
                ("val", "soft_reward", soft_g),
                ("val", "hard_reward", hard_g),
                ("val", "logged_reward", val_logged_mean),
            ],
        })
    };
    let (model, mut report) = fit(ranker, train.len(), cfg, "ranker", step, validate)?;
    report.bound = Some(bound_check);
    Ok((model, report))
}
