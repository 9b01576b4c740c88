use crate::autodiff::{softplus, Tape, Var};
use crate::error::{Error, Result};
use crate::softsort::HardPermutation;
use crate::tensor::Tensor;

use super::discount;

/// Two orders of one group, `pi_plus` preferred by the frozen reward.
#[derive(Debug, Clone, PartialEq)]
pub struct PermutationPair {
    pub pi_plus: HardPermutation,
    pub pi_minus: HardPermutation,
    pub g_plus: f64,
    pub g_minus: f64,
}

impl PermutationPair {
    pub fn new(pi_plus: HardPermutation, g_plus: f64, pi_minus: HardPermutation, g_minus: f64) -> Result<Self> {
        if pi_plus.len() != pi_minus.len() {
            return Err(Error::contract("pair members have different lengths"));
        }
        if !(g_plus > g_minus) {
            return Err(Error::contract(format!("pair is not ordered: {g_plus} <= {g_minus}")));
        }
        Ok(Self {
            pi_plus,
            pi_minus,
            g_plus,
            g_minus,
        })
    }
}

/// `log(1 + exp(-(s_plus - s_minus)))`.
pub fn urcc_pair_loss(s_plus: f64, s_minus: f64) -> f64 {
    softplus(-(s_plus - s_minus))
}

/// Every order reachable from `perm` by exchanging two positions, `C(L, 2)`
/// in total, in lexicographic order of the swapped position pair.
pub fn swap_neighborhood(perm: &HardPermutation) -> Vec<HardPermutation> {
    let n = perm.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            out.push(perm.swapped(a, b));
        }
    }
    out
}

/// Pairs each swap neighbor against `perm`, ordered by `reward`. Neighbors
/// whose reward ties with `perm` carry no preference and are dropped.
pub fn urcc_pairs<F>(perm: &HardPermutation, mut reward: F) -> Result<Vec<PermutationPair>>
where
    F: FnMut(&HardPermutation) -> Result<f64>,
{
    let g0 = reward(perm)?;
    let mut pairs = Vec::new();
    for nb in swap_neighborhood(perm) {
        let g = reward(&nb)?;
        if g > g0 {
            pairs.push(PermutationPair::new(nb, g, perm.clone(), g0)?);
        } else if g < g0 {
            pairs.push(PermutationPair::new(perm.clone(), g0, nb, g)?);
        }
    }
    Ok(pairs)
}

/// Pairwise score loss `softplus(-(S(π⁺) - S(π⁻)))` with the ranker's
/// list score `S(π) = Σ_k s_π(k) / log2(k + 2)`.
pub fn urcc_surrogate(tape: &mut Tape<'_>, scores: Var, pair: &PermutationPair) -> Result<Var> {
    let len = tape.value(scores).len();
    if pair.pi_plus.len() != len {
        return Err(Error::contract("pair length differs from score length"));
    }
    // S(π⁺) - S(π⁻) is linear in the scores: Σ_i s_i (d⁺_i - d⁻_i).
    let (p, m) = (pair.pi_plus.positions(), pair.pi_minus.positions());
    let coef: Vec<f64> = (0..len).map(|i| discount(p[i]) - discount(m[i])).collect();
    let c = tape.constant(Tensor::vector(coef));
    let prod = tape.mul(scores, c)?;
    let margin = tape.sum(prod);
    let neg = tape.neg(margin);
    Ok(tape.softplus(neg))
}
