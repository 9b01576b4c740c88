//! Offline protocols: utility under the position-bias oracle, purchase
//! probability under the behavioral user, click DCG on logged feedback, and
//! a file exchange for external list judges.

mod judge;
mod metrics;

pub use judge::{export_requests, import_responses, read_requests, read_responses, simulate_responses, ImportStats, JudgeItem, JudgeRequest, JudgeResponse, REQUEST_FORMAT, RESPONSE_FORMAT};
pub use metrics::{mean_se, MetricEntry, MetricsReport, METRICS_FORMAT, METRICS_VERSION};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::discount;
use crate::data::{Dataset, ModelInputs, QueryGroup};
use crate::error::{Error, Result};
use crate::models::RankerModel;
use crate::oracles::{ideal_permutation, BehavioralUser, BehavioralUserConfig, IpsOracle};
use crate::rng::group_stream;
use crate::softsort::{all_permutations, hard_permutation, HardPermutation};

pub const IDEAL: &str = "ideal";
pub const LOGGED: &str = "logged";
pub const POLICY_IN_DATA: &str = "policy_in_data";

/// Anything that orders a query group.
pub trait RankingPolicy: Sync {
    fn rank(&self, group: &QueryGroup, inputs: &ModelInputs) -> Result<HardPermutation>;
}

impl RankingPolicy for RankerModel {
    fn rank(&self, _: &QueryGroup, inputs: &ModelInputs) -> Result<HardPermutation> {
        Ok(hard_permutation(&self.predict_scores(inputs.query.data(), &inputs.items)?))
    }
}

/// Sorts by the true relevance logits.
pub struct IdealPolicy;

impl RankingPolicy for IdealPolicy {
    fn rank(&self, group: &QueryGroup, _: &ModelInputs) -> Result<HardPermutation> {
        Ok(ideal_permutation(&group.rel_logits))
    }
}

/// Reproduces the logged order.
pub struct LoggedPolicy;

impl RankingPolicy for LoggedPolicy {
    fn rank(&self, group: &QueryGroup, _: &ModelInputs) -> Result<HardPermutation> {
        Ok(group.logged.clone())
    }
}

/// Uniformly random order from a per-group stream.
pub struct RandomPolicy {
    pub seed: u64,
}

impl RankingPolicy for RandomPolicy {
    fn rank(&self, group: &QueryGroup, _: &ModelInputs) -> Result<HardPermutation> {
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.shuffle(&mut group_stream(self.seed, group.group_id));
        HardPermutation::new(order)
    }
}

/// Exhaustive search for the behavioral user's favorite order. Only
/// practical for short lists.
pub struct BehavioralOraclePolicy {
    pub user: BehavioralUser,
}

impl RankingPolicy for BehavioralOraclePolicy {
    fn rank(&self, group: &QueryGroup, _: &ModelInputs) -> Result<HardPermutation> {
        if group.len() > 8 {
            return Err(Error::contract("exhaustive search is limited to 8 items"));
        }
        let mut best: Option<(f64, HardPermutation)> = None;
        for p in all_permutations(group.len()) {
            let v = self.user.purchase_prob_group(group, &p)?.p_purchase;
            if best.as_ref().is_none_or(|(b, _)| v > *b) {
                best = Some((v, p));
            }
        }
        Ok(best.expect("non-empty group").1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GainKind {
    /// `sigmoid(R)`.
    #[default]
    Probability,
    /// `2^sigmoid(R) - 1`.
    Exponential,
}

impl GainKind {
    fn gain(self, rel_logit: f64) -> f64 {
        let p = crate::autodiff::sigmoid(rel_logit);
        match self {
            GainKind::Probability => p,
            GainKind::Exponential => p.exp2() - 1.0,
        }
    }
}

/// DCG@k of gains listed in rank order.
pub fn dcg_at(gains_in_order: &[f64], k: usize) -> f64 {
    gains_in_order.iter().take(k).enumerate().map(|(i, g)| g * discount(i)).sum()
}

/// NDCG@k of the order induced by `scores` against relevance gains.
pub fn ndcg_rel(scores: &[f64], rel_logits: &[f64], k: usize) -> Result<f64> {
    ndcg_rel_with(&hard_permutation(scores), rel_logits, k, GainKind::Probability)
}

pub fn ndcg_rel_with(perm: &HardPermutation, rel_logits: &[f64], k: usize, gain: GainKind) -> Result<f64> {
    let len = rel_logits.len();
    if k < 1 || k > len {
        return Err(Error::contract(format!("cutoff k = {k} outside 1..={len}")));
    }
    if perm.len() != len {
        return Err(Error::contract("permutation and relevance lengths differ"));
    }
    let gains: Vec<f64> = rel_logits.iter().map(|&r| gain.gain(r)).collect();
    let ranked: Vec<f64> = perm.order().iter().map(|&i| gains[i]).collect();
    let mut ideal = gains.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let best = dcg_at(&ideal, k);
    if best == 0.0 {
        return Ok(1.0);
    }
    Ok(dcg_at(&ranked, k) / best)
}

/// Orders every group of `ds` with `policy`, in parallel, preserving order.
pub fn rank_all(policy: &dyn RankingPolicy, ds: &Dataset) -> Result<Vec<HardPermutation>> {
    let inputs = ds.model_inputs();
    ds.groups.par_iter().zip(&inputs).map(|(g, x)| policy.rank(g, x)).collect()
}

/// Settings of the position-bias protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdEvalConfig {
    pub k: usize,
    pub gain: GainKind,
}

impl Default for KdEvalConfig {
    fn default() -> Self {
        Self {
            k: 8,
            gain: GainKind::Probability,
        }
    }
}

fn kd_rows(report: &mut MetricsReport, method: &str, oracle: &IpsOracle, ds: &Dataset, perms: &[HardPermutation], cfg: &KdEvalConfig) -> Result<Vec<f64>> {
    let k = cfg.k.min(ds.world.list_len);
    let (u, ndcg): (Vec<f64>, Vec<f64>) = ds
        .groups
        .par_iter()
        .zip(perms)
        .map(|(g, p)| Ok((oracle.u_ips_group(g, p)?, ndcg_rel_with(p, &g.rel_logits, k, cfg.gain)?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    report.push(method, "u_ips", None, &u);
    report.push(method, &format!("ndcg_rel@{k}"), None, &ndcg);
    Ok(u)
}

/// Utility under the position-bias oracle for `policy`, the ideal sorter and
/// the logging policy.
pub fn eval_kd(method: &str, policy: &dyn RankingPolicy, oracle: &IpsOracle, ds: &Dataset, cfg: &KdEvalConfig) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(Error::contract("cannot evaluate an empty dataset"));
    }
    let mut report = MetricsReport::new();
    let perms = rank_all(policy, ds)?;
    let u = kd_rows(&mut report, method, oracle, ds, &perms, cfg)?;
    let ideal = kd_rows(&mut report, IDEAL, oracle, ds, &rank_all(&IdealPolicy, ds)?, cfg)?;
    kd_rows(&mut report, LOGGED, oracle, ds, &rank_all(&LoggedPolicy, ds)?, cfg)?;
    if let Some(i) = u.iter().zip(&ideal).position(|(a, b)| a > b) {
        return Err(Error::contract(format!(
            "group {}: utility {} exceeds the ideal order's {}",
            ds.groups[i].group_id, u[i], ideal[i]
        )));
    }
    Ok(report)
}

fn check_cutoffs(cutoffs: &[f64]) -> Result<()> {
    for &c in cutoffs {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::domain(format!("cutoff {c} outside (0, 1]")));
        }
    }
    Ok(())
}

/// Overall and cutoff-conditional means of `values`, where group `i`
/// belongs to cutoff `c` when `logged[i] < c`.
pub(crate) fn lau_rows(report: &mut MetricsReport, method: &str, values: &[f64], logged: &[f64], cutoffs: &[f64]) {
    report.push(method, "p_purchase", None, values);
    for &c in cutoffs {
        let sub: Vec<f64> = values.iter().zip(logged).filter(|(_, &l)| l < c).map(|(&v, _)| v).collect();
        report.push(method, "p_purchase", Some(c), &sub);
    }
}

/// Purchase probability of the behavioral user for the logged order of
/// every group, which also defines cutoff membership.
pub fn logged_purchase(user: &BehavioralUser, ds: &Dataset) -> Result<Vec<f64>> {
    ds.groups.par_iter().map(|g| Ok(user.purchase_prob_group(g, &g.logged)?.p_purchase)).collect()
}

/// Expected purchase probability of `policy`'s lists under the behavioral
/// user, overall and restricted to groups whose logged list scores below
/// each cutoff, with the logged lists as reference.
pub fn eval_lau(method: &str, policy: &dyn RankingPolicy, cfg: &BehavioralUserConfig, ds: &Dataset, cutoffs: &[f64]) -> Result<MetricsReport> {
    check_cutoffs(cutoffs)?;
    if ds.is_empty() {
        return Err(Error::contract("cannot evaluate an empty dataset"));
    }
    let user = BehavioralUser::new(cfg.clone())?;
    let perms = rank_all(policy, ds)?;
    let values: Vec<f64> = ds
        .groups
        .par_iter()
        .zip(&perms)
        .map(|(g, p)| Ok(user.purchase_prob_group(g, p)?.p_purchase))
        .collect::<Result<_>>()?;
    let logged = logged_purchase(&user, ds)?;
    let mut report = MetricsReport::new();
    lau_rows(&mut report, method, &values, &logged, cutoffs);
    lau_rows(&mut report, POLICY_IN_DATA, &logged, &logged, cutoffs);
    Ok(report)
}

/// DCG@k of the reranked list with the logged clicks as gains.
pub fn dcg_clicks(method: &str, policy: &dyn RankingPolicy, ds: &Dataset, k: usize) -> Result<MetricsReport> {
    if k < 1 {
        return Err(Error::contract("cutoff k must be at least 1"));
    }
    if ds.is_empty() {
        return Err(Error::contract("cannot evaluate an empty dataset"));
    }
    let mut report = MetricsReport::new();
    for (name, perms) in [(method, rank_all(policy, ds)?), (LOGGED, rank_all(&LoggedPolicy, ds)?)] {
        let values: Vec<f64> = ds
            .groups
            .iter()
            .zip(&perms)
            .map(|(g, p)| {
                let gains: Vec<f64> = p.order().iter().map(|&i| f64::from(g.clicks[i])).collect();
                dcg_at(&gains, k)
            })
            .collect();
        report.push(name, &format!("dcg@{k}"), None, &values);
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
