use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, NamedTensor, RankerModel, RewardModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_FORMAT: &str = "permurank.checkpoint";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Reward,
    Ranker,
}

/// JSON container of a model's configuration and flat parameter arrays.
/// Reals are written with shortest round-trip formatting, so loading
/// reproduces every parameter bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    fn new(kind: ModelKind, config: &ModelConfig, params: &[NamedTensor]) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind,
            config: config.clone(),
            params: params.to_vec(),
        }
    }

    pub fn from_reward(model: &RewardModel) -> Self {
        Self::new(ModelKind::Reward, model.config(), model.params().entries())
    }

    pub fn from_ranker(model: &RankerModel) -> Self {
        Self::new(ModelKind::Ranker, model.config(), model.params().entries())
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses a checkpoint, refusing unknown formats and versions.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        let format = value.get("format").and_then(|v| v.as_str());
        if format != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Data(format!("not a checkpoint file (format {format:?})")));
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(Error::SchemaVersion {
                what: "checkpoint".into(),
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: CHECKPOINT_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        ckpt.config.validate().map_err(|e| Error::Data(e.to_string()))?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s)
    }

    fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Data(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn into_reward(self) -> Result<RewardModel> {
        self.expect_kind(ModelKind::Reward)?;
        let mut model = RewardModel::new(&self.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        model.store_mut().load(self.params)?;
        Ok(model)
    }

    pub fn into_ranker(self) -> Result<RankerModel> {
        self.expect_kind(ModelKind::Ranker)?;
        let mut model = RankerModel::new(&self.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        model.store_mut().load(self.params)?;
        Ok(model)
    }
}
