//! Set encoders, the permutation-aware reward model and the
//! permutation-equivariant ranker.

mod checkpoint;
mod encoder;
mod params;
mod ranker;
mod reward;

pub use checkpoint::{Checkpoint, ModelKind, CHECKPOINT_VERSION};
pub use encoder::{Encoder, EncoderConfig};
pub use params::{NamedTensor, ParamId, ParamStore};
pub use ranker::RankerModel;
pub use reward::RewardModel;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Input dimensions and encoder shape shared by both models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Query features, including any appended context features.
    pub query_dim: usize,
    pub item_dim: usize,
    /// Rows of the reward model's position table.
    pub max_len: usize,
    pub encoder: EncoderConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.query_dim == 0 || self.item_dim == 0 || self.max_len == 0 {
            return Err(Error::contract("model dimensions must be positive"));
        }
        self.encoder.validate()
    }
}

/// Affine map `x W + b`.
#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub(crate) fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), xavier(&[fan_in, fan_out], rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Self { w, b }
    }

    pub(crate) fn forward(&self, tape: &mut Tape<'_>, bound: &[Var], x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound[self.w.0])?;
        tape.add_row(y, bound[self.b.0])
    }
}

/// Uniform(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn xavier<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let (fan_in, fan_out) = (shape[0], shape[shape.len() - 1]);
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-a..a)).collect()).unwrap()
}

pub(crate) fn small_normal<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, 0.02).unwrap();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).unwrap()
}

/// Per-item projection of `[q; i_l]` into the model width: `[L, d]`.
pub fn embed_group(tape: &mut Tape<'_>, query: Var, items: Var, proj_w: Var, proj_b: Var) -> Result<Var> {
    let q = tape.value(query);
    let it = tape.value(items);
    if q.shape().len() != 1 || it.shape().len() != 2 {
        return Err(Error::contract(format!(
            "embed_group expects a query vector and an item matrix, got {:?} and {:?}",
            q.shape(),
            it.shape()
        )));
    }
    let (len, qd) = (it.rows(), q.len());
    if tape.value(proj_w).rows() != qd + it.cols() {
        return Err(Error::contract(format!(
            "projection expects {} input features, got {}",
            tape.value(proj_w).rows(),
            qd + it.cols()
        )));
    }
    let ones = tape.constant(Tensor::filled(&[len, 1], 1.0));
    let q_row = tape.reshape(query, &[1, qd])?;
    let q_rows = tape.matmul(ones, q_row)?;
    let x = tape.concat(&[q_rows, items])?;
    let y = tape.matmul(x, proj_w)?;
    tape.add_row(y, proj_b)
}

/// Binds every tensor of a store to the tape, borrowing the values.
pub(crate) fn bind<'a>(store: &'a ParamStore, tape: &mut Tape<'a>, trainable: bool) -> Vec<Var> {
    store
        .tensors()
        .map(|t| {
            if trainable {
                tape.param_ref(t)
            } else {
                tape.constant_ref(t)
            }
        })
        .collect()
}

pub(crate) fn check_group(cfg: &ModelConfig, query: &[f64], items: &Tensor) -> Result<()> {
    if query.len() != cfg.query_dim {
        return Err(Error::contract(format!(
            "query has {} features, model expects {}",
            query.len(),
            cfg.query_dim
        )));
    }
    if items.shape().len() != 2 || items.cols() != cfg.item_dim {
        return Err(Error::contract(format!(
            "items have shape {:?}, model expects [L, {}]",
            items.shape(),
            cfg.item_dim
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
