//! Ground-truth user simulators.
//!
//! [`IpsOracle`] factorizes a click into examination of the position times
//! relevance of the item, and scores a list by the probability of at least
//! one click. [`BehavioralUser`] stands in for a language-model shopper: it
//! starts from the same position-weighted "at least one" probability and
//! multiplies in penalties for adjacent same-brand items, adjacent
//! same-color items and irrelevant items near the top.
//!
//! Positions are 0-based throughout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::data::QueryGroup;
use crate::error::{Error, Result};
use crate::softsort::{hard_permutation, HardPermutation};

/// Examination probability per rank position for the first eight ranks.
pub const EXAMINATION: [f64; 8] = [1.0, 0.6738, 0.4145, 0.2932, 0.2079, 0.1714, 0.1363, 0.1166];

/// Position-bias click model with per-item relevance logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct IpsOracle {
    examination: Vec<f64>,
}

impl Default for IpsOracle {
    fn default() -> Self {
        Self {
            examination: EXAMINATION.to_vec(),
        }
    }
}

impl TryFrom<Vec<f64>> for IpsOracle {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<IpsOracle> for Vec<f64> {
    fn from(o: IpsOracle) -> Self {
        o.examination
    }
}

fn check_position_table(table: &[f64], what: &str) -> Result<()> {
    if table.is_empty() {
        return Err(Error::contract(format!("{what} table is empty")));
    }
    if table.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::domain(format!("{what} entries must lie in (0, 1]")));
    }
    if table.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::domain(format!("{what} table must be non-increasing")));
    }
    Ok(())
}

impl IpsOracle {
    pub fn new(examination: Vec<f64>) -> Result<Self> {
        check_position_table(&examination, "examination")?;
        if examination[0] != 1.0 {
            return Err(Error::domain("the top position must be examined with probability 1"));
        }
        Ok(Self { examination })
    }

    pub fn examination(&self) -> &[f64] {
        &self.examination
    }

    pub fn max_len(&self) -> usize {
        self.examination.len()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.examination.len() {
            return Err(Error::contract(format!(
                "list of {len} items exceeds the {} examination entries",
                self.examination.len()
            )));
        }
        Ok(())
    }

    /// `P(E_position) * sigmoid(rel_logit)`.
    pub fn click_prob(&self, position: usize, rel_logit: f64) -> Result<f64> {
        let e = self.examination.get(position).ok_or_else(|| {
            Error::contract(format!(
                "position {position} out of range for {} examination entries",
                self.examination.len()
            ))
        })?;
        Ok(e * sigmoid(rel_logit))
    }

    /// Probability of at least one click on the list `perm`.
    pub fn u_ips(&self, rel_logits: &[f64], perm: &HardPermutation) -> Result<f64> {
        self.check_len(perm.len())?;
        if perm.len() != rel_logits.len() {
            return Err(Error::contract("permutation and relevance lengths differ"));
        }
        let mut none = 1.0;
        for (k, &item) in perm.order().iter().enumerate() {
            none *= 1.0 - self.click_prob(k, rel_logits[item])?;
        }
        Ok(1.0 - none)
    }

    pub fn u_ips_group(&self, group: &QueryGroup, perm: &HardPermutation) -> Result<f64> {
        self.u_ips(&group.rel_logits, perm)
    }
}

/// Descending-relevance order; ties keep ascending item index. With a
/// non-increasing examination table this maximizes `u_ips`.
pub fn ideal_permutation(rel_logits: &[f64]) -> HardPermutation {
    hard_permutation(rel_logits)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehavioralUserConfig {
    pub position_scores: Vec<f64>,
    pub brand_penalty: f64,
    pub color_penalty: f64,
    pub irrelevance_penalty: f64,
    pub top_window: usize,
}

impl Default for BehavioralUserConfig {
    fn default() -> Self {
        Self {
            position_scores: EXAMINATION.to_vec(),
            brand_penalty: 0.3,
            color_penalty: 0.2,
            irrelevance_penalty: 0.4,
            top_window: 3,
        }
    }
}

impl BehavioralUserConfig {
    pub fn validate(&self) -> Result<()> {
        check_position_table(&self.position_scores, "position score")?;
        for (name, p) in [
            ("brand", self.brand_penalty),
            ("color", self.color_penalty),
            ("irrelevance", self.irrelevance_penalty),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::domain(format!("{name} penalty {p} outside [0, 1)")));
            }
        }
        if self.top_window == 0 {
            return Err(Error::domain("top window must hold at least one item"));
        }
        Ok(())
    }
}

/// The factors whose product is the simulated purchase probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurchaseBreakdown {
    pub base: f64,
    pub brand: f64,
    pub color: f64,
    pub irrelevance: f64,
    /// Product of the four factors before clamping.
    pub unclamped: f64,
    pub p_purchase: f64,
}

/// Rule-based shopper over an ordered list of items.
#[derive(Debug, Clone, PartialEq)]
pub struct BehavioralUser {
    cfg: BehavioralUserConfig,
}

fn adjacency_factor(ids: &[u32], order: &[usize], penalty: f64) -> f64 {
    if order.len() < 2 {
        return 1.0;
    }
    let pairs = order.windows(2).filter(|w| ids[w[0]] == ids[w[1]]).count();
    1.0 - penalty * pairs as f64 / (order.len() - 1) as f64
}

impl BehavioralUser {
    pub fn new(cfg: BehavioralUserConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &BehavioralUserConfig {
        &self.cfg
    }

    fn check(&self, rels: &[f64], perm: &HardPermutation) -> Result<()> {
        if perm.len() != rels.len() {
            return Err(Error::contract("permutation and relevance lengths differ"));
        }
        if perm.len() > self.cfg.position_scores.len() {
            return Err(Error::contract(format!(
                "list of {} items exceeds the {} position scores",
                perm.len(),
                self.cfg.position_scores.len()
            )));
        }
        if rels.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::domain("item relevance must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Purchase probability of the list `perm` with per-item relevance in
    /// `[0, 1]` and brand/color ids.
    pub fn purchase_prob(&self, rels: &[f64], brands: &[u32], colors: &[u32], perm: &HardPermutation) -> Result<PurchaseBreakdown> {
        self.check(rels, perm)?;
        if brands.len() != rels.len() || colors.len() != rels.len() {
            return Err(Error::contract("brand/color ids must cover every item"));
        }
        let order = perm.order();
        let none: f64 = order
            .iter()
            .enumerate()
            .map(|(k, &i)| 1.0 - self.cfg.position_scores[k] * rels[i])
            .product();
        let base = 1.0 - none;
        let brand = adjacency_factor(brands, order, self.cfg.brand_penalty);
        let color = adjacency_factor(colors, order, self.cfg.color_penalty);
        let window = self.cfg.top_window.min(order.len());
        let top_rel = order[..window].iter().map(|&i| rels[i]).sum::<f64>() / window as f64;
        let irrelevance = 1.0 - self.cfg.irrelevance_penalty * (1.0 - top_rel).max(0.0);
        let unclamped = base * brand * color * irrelevance;
        Ok(PurchaseBreakdown {
            base,
            brand,
            color,
            irrelevance,
            unclamped,
            p_purchase: unclamped.clamp(0.0, 1.0),
        })
    }

    pub fn purchase_prob_group(&self, group: &QueryGroup, perm: &HardPermutation) -> Result<PurchaseBreakdown> {
        self.purchase_prob(&group.relevance(), &group.brands, &group.colors, perm)
    }

    /// Item the shopper would pick: the largest `position_score * relevance`,
    /// earliest position on ties.
    pub fn choose_item(&self, rels: &[f64], perm: &HardPermutation) -> Result<usize> {
        self.check(rels, perm)?;
        let mut best = (0, f64::NEG_INFINITY);
        for (k, &item) in perm.order().iter().enumerate() {
            let v = self.cfg.position_scores[k] * rels[item];
            if v > best.1 {
                best = (item, v);
            }
        }
        Ok(best.0)
    }
}

/// Bernoulli draw.
pub fn sample_label<R: Rng>(p: f64, rng: &mut R) -> Result<u8> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(u8::from(rng.random::<f64>() < p))
}
