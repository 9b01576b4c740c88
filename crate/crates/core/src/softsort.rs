//! SoftSort relaxation of argsort and the helpers that turn ranker scores
//! into (soft) position embeddings for the reward model.
//!
//! Row `k` of the soft permutation matrix is a softmax over items of
//! `-|s_l - s_[k]| / tau`, where `s_[k]` is the k-th largest score. The
//! sort producing `s_[k]` runs on detached values; gradients reach `s_[k]`
//! through a gather from its source coordinate.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_TAU: f64 = 1.0;

/// Ranking as a map from position (0-based) to item index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct HardPermutation {
    order: Vec<usize>,
}

impl TryFrom<Vec<usize>> for HardPermutation {
    type Error = Error;

    fn try_from(order: Vec<usize>) -> Result<Self> {
        Self::new(order)
    }
}

impl From<HardPermutation> for Vec<usize> {
    fn from(p: HardPermutation) -> Self {
        p.order
    }
}

impl HardPermutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &i in &order {
            if i >= order.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::contract(format!("{order:?} is not a permutation")));
            }
        }
        if order.is_empty() {
            return Err(Error::contract("empty permutation"));
        }
        Ok(Self { order })
    }

    pub fn identity(len: usize) -> Self {
        Self {
            order: (0..len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Item shown at each position, top first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Position of each item (inverse permutation).
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (k, &item) in self.order.iter().enumerate() {
            pos[item] = k;
        }
        pos
    }

    /// 0/1 matrix with `P[k, order[k]] = 1`.
    pub fn matrix(&self) -> Tensor {
        let n = self.order.len();
        let mut m = Tensor::zeros(&[n, n]);
        for (k, &item) in self.order.iter().enumerate() {
            m.data_mut()[k * n + item] = 1.0;
        }
        m
    }

    /// Swaps the items at two positions.
    pub fn swapped(&self, a: usize, b: usize) -> Self {
        let mut order = self.order.clone();
        order.swap(a, b);
        Self { order }
    }
}

/// Every permutation of `n` items in lexicographic order (`n!` entries).
pub fn all_permutations(n: usize) -> Vec<HardPermutation> {
    let mut out = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    loop {
        out.push(HardPermutation { order: order.clone() });
        // Next lexicographic permutation.
        let Some(i) = (1..n).rev().find(|&i| order[i - 1] < order[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| order[j] > order[i - 1]).unwrap();
        order.swap(i - 1, j);
        order[i..].reverse();
    }
}

/// Argsort by descending score; ties keep ascending item index.
pub fn hard_permutation(scores: &[f64]) -> HardPermutation {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    HardPermutation { order }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("temperature must be positive, got {tau}")))
    }
}

/// Row-stochastic relaxation of the descending argsort of a score vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftPermutationMatrix {
    pub matrix: Tensor,
    pub tau: f64,
}

/// Records SoftSort of the score vector `scores` on the tape (`[L] -> [L, L]`).
pub fn softsort(tape: &mut Tape<'_>, scores: Var, tau: f64) -> Result<Var> {
    check_tau(tau)?;
    let s = tape.value(scores);
    if !s.all_finite() {
        return Err(Error::domain("non-finite scores"));
    }
    let len = s.len();
    let order = hard_permutation(s.data());

    let sorted = tape.gather(scores, order.order())?;
    let row = tape.reshape(scores, &[1, len])?;
    let col = tape.reshape(sorted, &[len, 1])?;
    let ones_col = tape.constant(Tensor::filled(&[len, 1], 1.0));
    let ones_row = tape.constant(Tensor::filled(&[1, len], 1.0));
    let items = tape.matmul(ones_col, row)?;
    let ranks = tape.matmul(col, ones_row)?;
    let diff = tape.sub(items, ranks)?;
    let dist = tape.abs(diff);
    let logits = tape.scale(dist, -1.0 / tau);
    Ok(tape.softmax_rows(logits))
}

/// Evaluates SoftSort outside of any training graph.
pub fn softsort_matrix(scores: &[f64], tau: f64) -> Result<SoftPermutationMatrix> {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::vector(scores.to_vec()));
    let pi = softsort(&mut tape, s, tau)?;
    Ok(SoftPermutationMatrix {
        matrix: tape.value(pi).clone(),
        tau,
    })
}

/// Straight-through SoftSort: exact permutation matrix forward, SoftSort
/// gradient backward.
pub fn ste_combine(tape: &mut Tape<'_>, scores: Var, tau: f64) -> Result<Var> {
    let soft = softsort(tape, scores, tau)?;
    let hard = hard_permutation(tape.value(scores).data()).matrix();
    let hard = tape.constant(hard);
    let frozen = tape.detach(soft);
    // soft - detach(soft) is exactly zero, so the sum keeps the 0/1 values.
    let zero = tape.sub(soft, frozen)?;
    tape.add(hard, zero)
}

/// Mixes position embeddings by a (soft) permutation: returns `Πᵀ · P`.
pub fn soft_position_embed(tape: &mut Tape<'_>, pi: Var, positions: Var) -> Result<Var> {
    let (l1, l2) = tape.value(pi).dims2();
    let rows = tape.value(positions).rows();
    if l1 != l2 || rows != l1 || tape.value(positions).shape().len() != 2 {
        return Err(Error::contract(format!(
            "soft_position_embed: permutation {:?} vs position table {:?}",
            tape.value(pi).shape(),
            tape.value(positions).shape()
        )));
    }
    let pit = tape.transpose(pi)?;
    tape.matmul(pit, positions)
}
