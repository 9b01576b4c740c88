use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::data::ModelInputs;
use crate::error::{Error, Result};
use crate::models::{RankerModel, RewardModel};
use crate::softsort::{hard_permutation, HardPermutation};
use crate::tensor::Tensor;

/// Gumbel-argsort sampler over `scores / temperature`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlackettLuceSampler {
    pub temperature: f64,
    /// Permutations drawn per group and step.
    pub samples: usize,
}

impl Default for PlackettLuceSampler {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            samples: 10,
        }
    }
}

impl PlackettLuceSampler {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::contract("need at least one sample"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::domain(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// `Σ_k [s_π(k) - logsumexp_{j≥k} s_π(j)]`.
pub fn pl_log_prob(scores: &[f64], perm: &HardPermutation) -> Result<f64> {
    if perm.len() != scores.len() {
        return Err(Error::contract("permutation and score lengths differ"));
    }
    let s: Vec<f64> = perm.order().iter().map(|&i| scores[i]).collect();
    let mut total = 0.0;
    for k in 0..s.len() {
        let m = s[k..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + s[k..].iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total += s[k] - lse;
    }
    Ok(total)
}

/// Differentiable [`pl_log_prob`] of a `[L]` score node.
pub fn pl_log_prob_var(tape: &mut Tape<'_>, scores: Var, perm: &HardPermutation) -> Result<Var> {
    if perm.len() != tape.value(scores).len() {
        return Err(Error::contract("permutation and score lengths differ"));
    }
    let order = perm.order();
    let mut terms = Vec::with_capacity(order.len());
    for k in 0..order.len() {
        let suffix = tape.gather(scores, &order[k..])?;
        // The shift is a constant; the result does not depend on it.
        let m = tape.value(suffix).data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted = tape.add_scalar(suffix, -m);
        let e = tape.exp(shifted);
        let s = tape.sum(e);
        let l = tape.log(s)?;
        let lse = tape.add_scalar(l, m);
        let head = tape.gather(scores, &order[k..k + 1])?;
        terms.push(tape.sub(head, lse)?);
    }
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = tape.add(total, t)?;
    }
    Ok(total)
}

/// Standard Gumbel draw by inverse CDF with `u` clamped away from 0 and 1.
fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12);
    -(-u.ln()).ln()
}

/// Exact Plackett-Luce draw over `scores / temperature`.
pub fn pl_sample<R: Rng>(sampler: &PlackettLuceSampler, scores: &[f64], rng: &mut R) -> HardPermutation {
    let perturbed: Vec<f64> = scores.iter().map(|&s| s / sampler.temperature + gumbel(rng)).collect();
    hard_permutation(&perturbed)
}

/// REINFORCE estimate of `∇_s E_π[g(π)]` with respect to the raw scores,
/// using the leave-one-out mean of the other samples as baseline (zero
/// baseline for a single sample).
pub fn pg_score_gradient<R, F>(sampler: &PlackettLuceSampler, scores: &[f64], rng: &mut R, mut reward: F) -> Result<(Vec<f64>, f64)>
where
    R: Rng,
    F: FnMut(&HardPermutation) -> Result<f64>,
{
    sampler.validate()?;
    let k = sampler.samples;
    let perms: Vec<HardPermutation> = (0..k).map(|_| pl_sample(sampler, scores, rng)).collect();
    let rewards: Vec<f64> = perms.iter().map(&mut reward).collect::<Result<_>>()?;
    let total: f64 = rewards.iter().sum();
    let mean_reward = total / k as f64;
    // Equal rewards carry no signal; skip the rounding residue of the baseline.
    if k > 1 && rewards.iter().all(|&r| r == rewards[0]) {
        return Ok((vec![0.0; scores.len()], mean_reward));
    }
    let mut tape = Tape::new();
    let s = tape.param(Tensor::vector(scores.to_vec()));
    let logits = tape.scale(s, 1.0 / sampler.temperature);
    let mut acc: Option<Var> = None;
    for (perm, &r) in perms.iter().zip(&rewards) {
        let baseline = if k > 1 { (total - r) / (k - 1) as f64 } else { 0.0 };
        let adv = r - baseline;
        if adv == 0.0 {
            continue;
        }
        let lp = pl_log_prob_var(&mut tape, logits, perm)?;
        let term = tape.scale(lp, adv / k as f64);
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let Some(surrogate) = acc else {
        return Ok((vec![0.0; scores.len()], mean_reward));
    };
    let grads = tape.backward(surrogate)?;
    Ok((grads.wrt(s).into_data(), mean_reward))
}

/// One group's policy-gradient ascent direction for the ranker parameters,
/// with the frozen reward scoring hard position rows of each sample.
pub fn pg_rank_step<R: Rng>(ranker: &RankerModel, reward: &RewardModel, inputs: &ModelInputs, sampler: &PlackettLuceSampler, rng: &mut R) -> Result<(Vec<Tensor>, f64)> {
    let (q, items) = (inputs.query.data(), &inputs.items);
    let scores = ranker.predict_scores(q, items)?;
    let (score_grad, mean_reward) = pg_score_gradient(sampler, &scores, rng, |p| reward.predict(q, items, p))?;
    let mut tape = Tape::new();
    let bound = ranker.bind(&mut tape, true);
    let qv = tape.constant_ref(&inputs.query);
    let iv = tape.constant_ref(items);
    let s = ranker.forward(&mut tape, &bound, qv, iv)?;
    let c = tape.constant(Tensor::vector(score_grad));
    let prod = tape.mul(s, c)?;
    let chained = tape.sum(prod);
    let grads = tape.backward(chained)?;
    Ok((bound.iter().map(|&v| grads.wrt(v)).collect(), mean_reward))
}
