//! Comparison rankers: a relaxed-NDCG learner, Plackett-Luce REINFORCE
//! against the learned reward, and a pairwise swap-neighborhood learner.

mod plackett_luce;
mod trainers;
mod urcc;

pub use plackett_luce::{pg_rank_step, pg_score_gradient, pl_log_prob, pl_log_prob_var, pl_sample, PlackettLuceSampler};
pub use trainers::{train_naive, train_pgrank, train_urcc, BaselineConfig, NaiveTarget, UrccInit};
pub use urcc::{swap_neighborhood, urcc_pair_loss, urcc_pairs, urcc_surrogate, PermutationPair};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::softsort::softsort;
use crate::tensor::Tensor;

/// Rank discount `1 / log2(k + 2)` for a 0-based position `k`.
pub fn discount(k: usize) -> f64 {
    1.0 / ((k + 2) as f64).log2()
}

/// `1 - softDCG / idealDCG`, where the soft DCG sorts `gains` by the
/// relaxed permutation of `scores`. Zero when every gain is zero.
pub fn relaxed_ndcg_loss(tape: &mut Tape<'_>, scores: Var, gains: &[f64], tau: f64) -> Result<Var> {
    let len = tape.value(scores).len();
    if gains.len() != len {
        return Err(Error::contract(format!("{} gains for {len} scores", gains.len())));
    }
    if gains.iter().any(|&g| !(g >= 0.0 && g.is_finite())) {
        return Err(Error::domain("gains must be finite and non-negative"));
    }
    let mut ideal: Vec<f64> = gains.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let ideal_dcg: f64 = ideal.iter().enumerate().map(|(k, g)| g * discount(k)).sum();
    if ideal_dcg == 0.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let pi = softsort(tape, scores, tau)?;
    let g = tape.constant(Tensor::new(vec![len, 1], gains.to_vec())?);
    let sorted = tape.matmul(pi, g)?;
    let disc = tape.constant(Tensor::new(vec![len, 1], (0..len).map(|k| discount(k) / ideal_dcg).collect())?);
    let weighted = tape.mul(sorted, disc)?;
    let ndcg = tape.sum(weighted);
    let neg = tape.neg(ndcg);
    Ok(tape.add_scalar(neg, 1.0))
}

#[cfg(test)]
mod tests;
