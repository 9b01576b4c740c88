use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{xavier, Linear, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    /// Prepend a learned summary token (reward model only).
    pub use_cls: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            depth: 2,
            width: 32,
            heads: 4,
            ffn_mult: 2,
            use_cls: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 || self.heads == 0 || self.ffn_mult == 0 {
            return Err(Error::contract("encoder sizes must be positive"));
        }
        if self.width % self.heads != 0 {
            return Err(Error::contract(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone)]
struct Head {
    q: ParamId,
    k: ParamId,
    v: ParamId,
}

#[derive(Debug, Clone)]
struct Block {
    ln1: (ParamId, ParamId),
    heads: Vec<Head>,
    out: Linear,
    ln2: (ParamId, ParamId),
    ff1: Linear,
    ff2: Linear,
}

/// Pre-norm transformer encoder over an unordered token set.
///
/// Attention carries no positional signal of its own, so the output for a
/// token depends only on the multiset of input rows.
#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    blocks: Vec<Block>,
    final_ln: (ParamId, ParamId),
}

fn layer_norm_params(store: &mut ParamStore, name: &str, width: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{name}.gain"), Tensor::filled(&[width], 1.0)),
        store.add(format!("{name}.bias"), Tensor::zeros(&[width])),
    )
}

fn affine_norm(tape: &mut Tape<'_>, bound: &[Var], ln: (ParamId, ParamId), x: Var) -> Result<Var> {
    let n = tape.layer_norm(x);
    let n = tape.mul_row(n, bound[ln.0 .0])?;
    tape.add_row(n, bound[ln.1 .0])
}

impl Encoder {
    pub(crate) fn new<R: Rng>(cfg: &EncoderConfig, prefix: &str, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (d, dh) = (cfg.width, cfg.head_dim());
        let blocks = (0..cfg.depth)
            .map(|i| {
                let p = format!("{prefix}.block{i}");
                let ln1 = layer_norm_params(store, &format!("{p}.ln1"), d);
                let heads = (0..cfg.heads)
                    .map(|h| Head {
                        q: store.add(format!("{p}.head{h}.q"), xavier(&[d, dh], rng)),
                        k: store.add(format!("{p}.head{h}.k"), xavier(&[d, dh], rng)),
                        v: store.add(format!("{p}.head{h}.v"), xavier(&[d, dh], rng)),
                    })
                    .collect();
                let out = Linear::new(store, &format!("{p}.attn_out"), d, d, rng);
                let ln2 = layer_norm_params(store, &format!("{p}.ln2"), d);
                let ff1 = Linear::new(store, &format!("{p}.ff1"), d, d * cfg.ffn_mult, rng);
                let ff2 = Linear::new(store, &format!("{p}.ff2"), d * cfg.ffn_mult, d, rng);
                Block {
                    ln1,
                    heads,
                    out,
                    ln2,
                    ff1,
                    ff2,
                }
            })
            .collect();
        let final_ln = layer_norm_params(store, &format!("{prefix}.final_ln"), d);
        Ok(Self {
            cfg: cfg.clone(),
            blocks,
            final_ln,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Maps `[n, d]` token rows to `[n, d]` contextual rows.
    pub fn forward(&self, tape: &mut Tape<'_>, bound: &[Var], x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.cfg.width || tape.value(x).shape().len() != 2 {
            return Err(Error::contract(format!(
                "encoder expects [n, {}] tokens, got {:?}",
                self.cfg.width,
                tape.value(x).shape()
            )));
        }
        let scale = 1.0 / (self.cfg.head_dim() as f64).sqrt();
        let mut h = x;
        for block in &self.blocks {
            let n = affine_norm(tape, bound, block.ln1, h)?;
            let mut heads = Vec::with_capacity(block.heads.len());
            for head in &block.heads {
                let q = tape.matmul(n, bound[head.q.0])?;
                let k = tape.matmul(n, bound[head.k.0])?;
                let v = tape.matmul(n, bound[head.v.0])?;
                let kt = tape.transpose(k)?;
                let logits = tape.matmul(q, kt)?;
                let logits = tape.scale(logits, scale);
                let attn = tape.softmax_rows(logits);
                heads.push(tape.matmul(attn, v)?);
            }
            let cat = tape.concat(&heads)?;
            let attn_out = block.out.forward(tape, bound, cat)?;
            h = tape.add(h, attn_out)?;

            let n = affine_norm(tape, bound, block.ln2, h)?;
            let f = block.ff1.forward(tape, bound, n)?;
            let f = tape.tanh(f);
            let f = block.ff2.forward(tape, bound, f)?;
            h = tape.add(h, f)?;
        }
        affine_norm(tape, bound, self.final_ln, h)
    }
}
