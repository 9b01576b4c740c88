//! Adam with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: AdamWConfig) -> Self {
        let zeros = || store.tensors().map(|t| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Self {
            cfg,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One update of every tensor in `store` with gradients `grads` (same
    /// order and shapes) at learning rate `lr`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || grads.len() != store.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} tensors, got {} gradients for {} parameters",
                self.m.len(),
                grads.len(),
                store.len()
            )));
        }
        self.t += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t);
        let bc2 = 1.0 - beta2.powi(self.t);
        for (((p, g), m), v) in store.tensors_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if p.shape() != g.shape() {
                return Err(Error::contract(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let (pd, gd) = (p.data_mut(), g.data());
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * gd[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * gd[i] * gd[i];
                let update = (md[i] / bc1) / ((vd[i] / bc2).sqrt() + eps);
                pd[i] -= lr * (update + weight_decay * pd[i]);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::models::{ModelConfig, RankerModel};

    fn store() -> ParamStore {
        let cfg = ModelConfig {
            query_dim: 2,
            item_dim: 3,
            max_len: 4,
            encoder: Default::default(),
        };
        RankerModel::new(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().params().clone()
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut s = store();
        let before = s.clone();
        let grads: Vec<Tensor> = s.tensors().map(|t| t.map(|x| x.sin() + 0.3)).collect();
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        opt.step(&mut s, &grads, 0.0).unwrap();
        for (a, b) in s.tensors().zip(before.tensors()) {
            assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn first_step_matches_closed_form() {
        // At t = 1 the bias-corrected step is g / (|g| + eps).
        let mut s = store();
        let before = s.clone();
        let grads: Vec<Tensor> = s.tensors().map(|t| t.map(|x| 2.0 * x - 0.1)).collect();
        let cfg = AdamWConfig::default();
        let mut opt = AdamW::new(&s, cfg.clone());
        let lr = 1e-2;
        opt.step(&mut s, &grads, lr).unwrap();
        for ((a, b), g) in s.tensors().zip(before.tensors()).zip(&grads) {
            for ((&x, &x0), &gi) in a.data().iter().zip(b.data()).zip(g.data()) {
                let expect = x0 - lr * (gi / (gi.abs() + cfg.eps) + cfg.weight_decay * x0);
                assert!((x - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = store();
        let mut opt = AdamW::new(
            &s,
            AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            },
        );
        for _ in 0..2000 {
            let grads: Vec<Tensor> = s.tensors().map(|t| t.map(|x| 2.0 * (x - 0.5))).collect();
            opt.step(&mut s, &grads, 1e-2).unwrap();
        }
        assert!(s.tensors().all(|t| t.data().iter().all(|x| (x - 0.5).abs() < 1e-3)));
    }

    #[test]
    fn rejects_mismatched_gradients() {
        let mut s = store();
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        assert!(opt.step(&mut s, &[], 1e-3).is_err());
    }
}
