use rayon::prelude::*;

use super::{batch_gradients, check_nonempty, fit, LossKind, TrainConfig, TrainReport, Validation, STREAM_INIT};
use crate::autodiff::{Tape, Var};
use crate::data::{Dataset, ModelInputs};
use crate::error::Result;
use crate::models::RewardModel;
use crate::rng::global_stream;

/// Per-group loss of the reward model on its logged permutation, built on
/// `tape` from the pre-sigmoid utility `logit`.
pub fn reward_loss(tape: &mut Tape<'_>, logit: Var, label: f64, kind: LossKind) -> Var {
    match kind {
        // softplus(z) - y z == -(y log g + (1 - y) log(1 - g)), stably.
        LossKind::CrossEntropy => {
            let sp = tape.softplus(logit);
            let yz = tape.scale(logit, label);
            let d = tape.neg(yz);
            tape.add(sp, d).expect("scalar shapes")
        }
        LossKind::SquaredError => {
            let g = tape.sigmoid(logit);
            let r = tape.add_scalar(g, -label);
            tape.mul(r, r).expect("scalar shapes")
        }
    }
}

fn loss_value(g: f64, label: f64, kind: LossKind) -> f64 {
    match kind {
        LossKind::CrossEntropy => {
            let g = g.clamp(1e-15, 1.0 - 1e-15);
            -(label * g.ln() + (1.0 - label) * (1.0 - g).ln())
        }
        LossKind::SquaredError => (g - label).powi(2),
    }
}

/// Fits the reward model on logged permutations (hard position rows) and
/// keeps the epoch with the lowest validation loss.
pub fn train_reward(train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(RewardModel, TrainReport)> {
    check_nonempty(train, "reward training")?;
    check_nonempty(val, "reward validation")?;
    cfg.validate()?;
    let model = RewardModel::new(&cfg.model_config(train), &mut global_stream(cfg.seed, STREAM_INIT))?;
    let train_in = train.model_inputs();
    let val_in = val.model_inputs();

    let step = |m: &RewardModel, batch: &[usize], _| {
        let out = batch_gradients(m.params(), batch, |tape, bound, &i| {
            let g = &train.groups[i];
            let ModelInputs { query, items } = &train_in[i];
            let q = tape.constant_ref(query);
            let it = tape.constant_ref(items);
            let pos = m.hard_position_rows(tape, bound, &g.logged)?;
            let z = m.logit(tape, bound, q, it, pos)?;
            Ok((reward_loss(tape, z, g.label, cfg.loss), ()))
        })?;
        Ok((out.loss, out.grads))
    };
    let validate = |m: &RewardModel| {
        let preds = predict_logged(m, val, &val_in)?;
        let n = preds.len() as f64;
        let loss = preds.iter().zip(&val.groups).map(|(&p, g)| loss_value(p, g.label, cfg.loss)).sum::<f64>() / n;
        let mean_pred = preds.iter().sum::<f64>() / n;
        Ok(Validation {
            selection: loss,
            metrics: vec![("val", "loss", loss), ("val", "mean_reward", mean_pred)],
        })
    };
    fit(model, train.len(), cfg, "reward", step, validate)
}

/// Reward-model predictions on each group's logged permutation.
pub(crate) fn predict_logged(m: &RewardModel, ds: &Dataset, inputs: &[ModelInputs]) -> Result<Vec<f64>> {
    ds.groups
        .par_iter()
        .zip(inputs)
        .map(|(g, x)| m.predict(x.query.data(), &x.items, &g.logged))
        .collect()
}
