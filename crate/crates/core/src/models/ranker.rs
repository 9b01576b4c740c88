use rand::Rng;

use super::{bind, check_group, embed_group, xavier, Encoder, Linear, ModelConfig, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Scoring policy `f(q, items)`: encoder without positions, per-token
/// sigmoid readout. Permuting the items permutes the scores.
#[derive(Debug, Clone)]
pub struct RankerModel {
    cfg: ModelConfig,
    store: ParamStore,
    proj: Linear,
    encoder: Encoder,
    readout: ParamId,
}

impl RankerModel {
    pub fn new<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut enc_cfg = cfg.encoder.clone();
        enc_cfg.use_cls = false;
        let cfg = ModelConfig {
            encoder: enc_cfg,
            ..cfg.clone()
        };
        let d = cfg.encoder.width;
        let mut store = ParamStore::new();
        let proj = Linear::new(&mut store, "ranker.proj", cfg.query_dim + cfg.item_dim, d, rng);
        let encoder = Encoder::new(&cfg.encoder, "ranker.encoder", &mut store, rng)?;
        let readout = store.add("ranker.readout".into(), xavier(&[d, 1], rng));
        Ok(Self {
            cfg,
            store,
            proj,
            encoder,
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

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> Vec<Var> {
        bind(&self.store, tape, trainable)
    }

    /// Item scores in (0, 1), shape `[L]`.
    pub fn forward(&self, tape: &mut Tape<'_>, bound: &[Var], query: Var, items: Var) -> Result<Var> {
        let len = tape.value(items).rows();
        let e = embed_group(tape, query, items, bound[self.proj.w.0], bound[self.proj.b.0])?;
        let h = self.encoder.forward(tape, bound, e)?;
        let z = tape.matmul(h, bound[self.readout.0])?;
        let z = tape.reshape(z, &[len])?;
        Ok(tape.sigmoid(z))
    }

    pub fn predict_scores(&self, query: &[f64], items: &Tensor) -> Result<Vec<f64>> {
        check_group(&self.cfg, query, items)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let q = tape.constant(Tensor::vector(query.to_vec()));
        let it = tape.constant_ref(items);
        let s = self.forward(&mut tape, &bound, q, it)?;
        Ok(tape.value(s).data().to_vec())
    }

    pub(crate) fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}
