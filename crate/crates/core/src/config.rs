//! Run configuration: one JSON document covering data, training and
//! evaluation, with named presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineConfig;
use crate::data::{LabelMode, SyntheticWorldConfig};
use crate::error::{Error, Result};
use crate::evaluation::KdEvalConfig;
use crate::training::{LossKind, TrainConfig};

pub const RUN_CONFIG_FORMAT: &str = "permurank.run_config";
pub const RUN_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub kd: KdEvalConfig,
    /// Logged purchase-probability thresholds for conditional entries.
    pub cutoffs: Vec<f64>,
    /// Cutoffs of the click-DCG protocol.
    pub dcg_k: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            kd: KdEvalConfig::default(),
            cutoffs: vec![0.8, 0.6, 0.4],
            dcg_k: vec![5, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Format tag; optional in files, always written.
    pub format: String,
    pub version: u32,
    /// Seeds the world, initialization, shuffling and sampling.
    pub seed: u64,
    /// Queries to generate; 80% of them land in the training split.
    pub queries: usize,
    pub world: SyntheticWorldConfig,
    pub reward: TrainConfig,
    pub ranker: TrainConfig,
    /// Ranker misspecification strengths to train.
    pub lambdas: Vec<f64>,
    /// Optimization settings shared by the baselines.
    pub baseline: TrainConfig,
    pub baselines: BaselineConfig,
    /// Sample counts of the Plackett-Luce runs.
    pub pg_samples: Vec<usize>,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::paper_kd()
    }
}

impl RunConfig {
    pub const PRESETS: &'static [&'static str] = &["paper-kd", "paper-lau", "smoke"];

    /// Position-bias world, 5000 training groups of 8 items.
    pub fn paper_kd() -> Self {
        let reward = TrainConfig {
            epochs: 20,
            loss: LossKind::SquaredError,
            ..Default::default()
        };
        let ranker = TrainConfig {
            epochs: 10,
            ..Default::default()
        };
        Self {
            format: RUN_CONFIG_FORMAT.into(),
            version: RUN_CONFIG_VERSION,
            seed: 0,
            queries: 6250,
            world: SyntheticWorldConfig::default(),
            reward,
            ranker: ranker.clone(),
            lambdas: vec![0.0, 0.1, 0.5, 1.0],
            baseline: ranker,
            baselines: BaselineConfig::default(),
            pg_samples: vec![10],
            eval: EvalConfig::default(),
        }
    }

    /// Behavioral-user world with purchase-probability labels.
    pub fn paper_lau() -> Self {
        let mut cfg = Self::paper_kd();
        cfg.world.label_mode = LabelMode::Behavioral;
        cfg.lambdas = vec![0.0, 1.0];
        cfg
    }

    /// Tiny configuration for quick end-to-end checks.
    pub fn smoke() -> Self {
        let mut cfg = Self::paper_kd();
        cfg.queries = 60;
        cfg.world.list_len = 5;
        for t in [&mut cfg.reward, &mut cfg.ranker, &mut cfg.baseline] {
            t.epochs = 2;
            t.batch_size = 16;
            t.encoder.width = 8;
            t.encoder.heads = 2;
            t.encoder.depth = 1;
        }
        cfg.lambdas = vec![0.0, 1.0];
        cfg.baselines.sampler.samples = 3;
        cfg.pg_samples = vec![3];
        cfg.eval.kd.k = 5;
        cfg.eval.dcg_k = vec![3, 5];
        cfg
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-kd" => Ok(Self::paper_kd()),
            "paper-lau" => Ok(Self::paper_lau()),
            "smoke" => Ok(Self::smoke()),
            _ => Err(Error::contract(format!(
                "unknown preset `{name}` (known: {})",
                Self::PRESETS.join(", ")
            ))),
        }
    }

    /// Copies `seed` into every component and checks the whole config.
    pub fn resolved(mut self) -> Result<Self> {
        self.world.seed = self.seed;
        for t in [&mut self.reward, &mut self.ranker, &mut self.baseline] {
            t.seed = self.seed;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != RUN_CONFIG_FORMAT {
            return Err(Error::Data(format!("run config format `{}` is not `{RUN_CONFIG_FORMAT}`", self.format)));
        }
        if self.version != RUN_CONFIG_VERSION {
            return Err(Error::SchemaVersion {
                what: "run config".into(),
                found: self.version,
                expected: RUN_CONFIG_VERSION,
            });
        }
        if self.queries < 10 {
            return Err(Error::contract("need at least 10 queries"));
        }
        self.world.validate()?;
        for t in [&self.reward, &self.ranker, &self.baseline] {
            t.validate()?;
        }
        if self.lambdas.is_empty() {
            return Err(Error::contract("need at least one lambda"));
        }
        for &l in &self.lambdas {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::domain(format!("lambda {l} must be finite and non-negative")));
            }
        }
        if self.pg_samples.contains(&0) {
            return Err(Error::contract("sample counts must be at least 1"));
        }
        self.baselines.sampler.validate()?;
        for &c in &self.eval.cutoffs {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::domain(format!("cutoff {c} outside (0, 1]")));
            }
        }
        if self.eval.kd.k == 0 || self.eval.dcg_k.contains(&0) {
            return Err(Error::contract("metric cutoffs k must be at least 1"));
        }
        Ok(())
    }

    /// Parses a config document. Unknown keys are rejected.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            what: "run config".into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                what: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid_and_round_trip() {
        for name in RunConfig::PRESETS {
            let cfg = RunConfig::preset(name).unwrap().resolved().unwrap();
            let back = RunConfig::from_json_str(&cfg.to_json_pretty().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_json_str(r#"{"seed": 9, "world": {"list_len": 6}, "ranker": {"epochs": 3}}"#).unwrap();
        assert_eq!(cfg.world.list_len, 6);
        assert_eq!(cfg.ranker.epochs, 3);
        assert_eq!(cfg.ranker.lr, 1e-3);
        let r = cfg.resolved().unwrap();
        assert_eq!((r.world.seed, r.reward.seed, r.baseline.seed), (9, 9, 9));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::from_json_str(r#"{"sed": 1}"#), Err(Error::Parse { .. })));
        assert!(RunConfig::from_json_str(r#"{"world": {"colour": 3}}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"lambdas": [-1.0]}"#).is_err());
        assert!(RunConfig::from_json_str(r#"{"eval": {"cutoffs": [1.5]}}"#).is_err());
        assert!(matches!(RunConfig::from_json_str(r#"{"version": 2}"#), Err(Error::SchemaVersion { .. })));
        match RunConfig::from_json_str("{\n\"seed\": \"x\"\n}") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
