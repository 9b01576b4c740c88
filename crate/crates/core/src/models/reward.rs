use rand::Rng;

use super::{bind, check_group, embed_group, small_normal, xavier, Encoder, Linear, ModelConfig, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::softsort::HardPermutation;
use crate::tensor::Tensor;

/// Utility model `g(q, items, π)`: a summary-token encoder over
/// `{e_l + p_l}` with a learned position table.
#[derive(Debug, Clone)]
pub struct RewardModel {
    cfg: ModelConfig,
    store: ParamStore,
    proj: Linear,
    encoder: Encoder,
    cls: ParamId,
    positions: ParamId,
    readout: ParamId,
}

impl RewardModel {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if !cfg.encoder.use_cls {
            return Err(Error::contract("the reward encoder needs a summary token"));
        }
        let d = cfg.encoder.width;
        let mut store = ParamStore::new();
        let proj = Linear::new(&mut store, "reward.proj", cfg.query_dim + cfg.item_dim, d, rng);
        let encoder = Encoder::new(&cfg.encoder, "reward.encoder", &mut store, rng)?;
        let cls = store.add("reward.cls".into(), small_normal(&[1, d], rng));
        let positions = store.add("reward.positions".into(), small_normal(&[cfg.max_len, d], rng));
        let readout = store.add("reward.readout".into(), xavier(&[d, 1], rng));
        Ok(Self {
            cfg: cfg.clone(),
            store,
            proj,
            encoder,
            cls,
            positions,
            readout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Full `[max_len, d]` position table.
    pub fn position_table(&self) -> &Tensor {
        self.store.get(self.positions)
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Vec<Var> {
        bind(&self.store, tape, trainable)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len > self.cfg.max_len {
            return Err(Error::contract(format!(
                "list of {len} items exceeds the {} position rows",
                self.cfg.max_len
            )));
        }
        Ok(())
    }

    /// First `len` rows of the position table, `[len, d]`.
    pub fn positions_var(&self, tape: &mut Tape<'_>, bound: &[Var], len: usize) -> Result<Var> {
        self.check_len(len)?;
        let rows: Vec<usize> = (0..len).collect();
        tape.select_rows(bound[self.positions.0], &rows)
    }

    /// Hard position rows `P[π]`: row `l` is the vector of item `l`'s position.
    pub fn hard_position_rows(&self, tape: &mut Tape<'_>, bound: &[Var], perm: &HardPermutation) -> Result<Var> {
        self.check_len(perm.len())?;
        tape.select_rows(bound[self.positions.0], &perm.positions())
    }

    /// Pre-sigmoid utility for items with the given per-item position rows.
    pub fn logit(&self, tape: &mut Tape<'_>, bound: &[Var], query: Var, items: Var, pos_rows: Var) -> Result<Var> {
        let len = tape.value(items).rows();
        self.check_len(len)?;
        let d = self.cfg.encoder.width;
        if tape.value(pos_rows).dims2() != (len, d) {
            return Err(Error::contract(format!(
                "position rows must be [{len}, {d}], got {:?}",
                tape.value(pos_rows).shape()
            )));
        }
        let e = embed_group(tape, query, items, bound[self.proj.w.0], bound[self.proj.b.0])?;
        let tokens = tape.add(e, pos_rows)?;
        let x = tape.vstack(&[bound[self.cls.0], tokens])?;
        let h = self.encoder.forward(tape, bound, x)?;
        let summary = tape.select_rows(h, &[0])?;
        let z = tape.matmul(summary, bound[self.readout.0])?;
        tape.reshape(z, &[1])
    }

    /// `g = sigmoid(logit)`.
    pub fn forward(&self, tape: &mut Tape<'_>, bound: &[Var], query: Var, items: Var, pos_rows: Var) -> Result<Var> {
        let z = self.logit(tape, bound, query, items, pos_rows)?;
        Ok(tape.sigmoid(z))
    }

    /// Utility of a hard permutation, evaluated without gradients.
    pub fn predict(&self, query: &[f64], items: &Tensor, perm: &HardPermutation) -> Result<f64> {
        check_group(&self.cfg, query, items)?;
        if perm.len() != items.rows() {
            return Err(Error::contract("permutation length differs from item count"));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let q = tape.constant(Tensor::vector(query.to_vec()));
        let it = tape.constant_ref(items);
        let pos = self.hard_position_rows(&mut tape, &bound, perm)?;
        let g = self.forward(&mut tape, &bound, q, it, pos)?;
        Ok(tape.scalar_value(g))
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}
