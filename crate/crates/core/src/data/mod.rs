//! Synthetic query groups: latent relevance, brand/color attributes, a
//! noisy logging policy and labels from either user simulator.

mod generate;
pub(crate) mod io;

pub use generate::{generate, split_counts, DatasetSplits};
pub use io::{load, load_split, read_dataset, save, save_splits, write_dataset, DATASET_FORMAT, DATASET_VERSION};

use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::error::{Error, Result};
use crate::oracles::{BehavioralUserConfig, IpsOracle};
use crate::softsort::HardPermutation;
use crate::tensor::Tensor;

/// Upper bound on list length; keeps `L!` enumeration oracles tractable.
pub const MAX_LIST_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Any click under the position-bias model (binary).
    BinaryClick,
    /// Probability of at least one click (soft, in `[0, 1]`).
    SoftIps,
    /// Simulated purchase probability (soft).
    Behavioral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Val => "val.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticWorldConfig {
    pub query_dim: usize,
    pub item_dim: usize,
    /// Optional context features appended to the query (0 disables).
    pub context_dim: usize,
    pub list_len: usize,
    pub n_brands: usize,
    pub n_colors: usize,
    /// Multiplier on the unit-variance bilinear relevance term.
    pub relevance_scale: f64,
    pub relevance_bias: f64,
    /// Std of the per-(query, item) relevance noise the features cannot explain.
    pub relevance_noise: f64,
    /// Std of the noise the logging ranker adds to relevance before sorting.
    pub logging_noise: f64,
    pub label_mode: LabelMode,
    /// Logged permutations per query (1, or 5 for multi-permutation logs).
    pub logged_per_query: usize,
    pub examination: IpsOracle,
    pub behavioral: BehavioralUserConfig,
    pub seed: u64,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        Self {
            query_dim: 6,
            item_dim: 6,
            context_dim: 0,
            list_len: 8,
            n_brands: 4,
            n_colors: 4,
            relevance_scale: 2.0,
            relevance_bias: -3.0,
            relevance_noise: 0.3,
            logging_noise: 2.0,
            label_mode: LabelMode::SoftIps,
            logged_per_query: 1,
            examination: IpsOracle::default(),
            behavioral: BehavioralUserConfig::default(),
            seed: 0,
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.query_dim == 0 || self.item_dim == 0 || self.n_brands == 0 || self.n_colors == 0 {
            return Err(Error::contract("world dimensions must be at least 1"));
        }
        if self.list_len == 0 || self.list_len > MAX_LIST_LEN {
            return Err(Error::contract(format!(
                "list length {} outside 1..={MAX_LIST_LEN}",
                self.list_len
            )));
        }
        if self.list_len > self.examination.max_len() || self.list_len > self.behavioral.position_scores.len() {
            return Err(Error::contract("position tables are shorter than the list length"));
        }
        if self.logged_per_query == 0 {
            return Err(Error::contract("need at least one logged permutation per query"));
        }
        for (name, v) in [
            ("relevance_noise", self.relevance_noise),
            ("logging_noise", self.logging_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be a finite non-negative std")));
            }
        }
        self.behavioral.validate()
    }

    pub fn features(&self) -> FeatureSpec {
        FeatureSpec {
            n_brands: self.n_brands,
            n_colors: self.n_colors,
        }
    }

    /// Width of the query input the models see.
    pub fn model_query_dim(&self) -> usize {
        self.query_dim + self.context_dim
    }

    /// Width of the per-item input the models see.
    pub fn model_item_dim(&self) -> usize {
        self.item_dim + self.n_brands + self.n_colors
    }
}

/// Vocabulary sizes used to one-hot encode item attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSpec {
    pub n_brands: usize,
    pub n_colors: usize,
}

/// One query, its candidate items and the logged presentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryGroup {
    pub group_id: u64,
    pub query_id: u64,
    pub query: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<Vec<f64>>,
    pub items: Vec<Vec<f64>>,
    pub brands: Vec<u32>,
    pub colors: Vec<u32>,
    /// Latent relevance logits `R`.
    pub rel_logits: Vec<f64>,
    /// Logged order: item index at each position.
    pub logged: HardPermutation,
    pub label: f64,
    /// Per-item clicks observed under the logged order.
    pub clicks: Vec<u8>,
    /// Simulated purchase probability of the logged order.
    pub logged_purchase: f64,
}

impl QueryGroup {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Per-item relevance probabilities `sigmoid(R)`.
    pub fn relevance(&self) -> Vec<f64> {
        self.rel_logits.iter().map(|&r| sigmoid(r)).collect()
    }

    /// Query vector with context features appended.
    pub fn query_features(&self) -> Vec<f64> {
        let mut q = self.query.clone();
        if let Some(c) = &self.context {
            q.extend_from_slice(c);
        }
        q
    }

    /// `[L, item_dim + n_brands + n_colors]` model input: raw features
    /// followed by one-hot brand and color.
    pub fn item_features(&self, spec: FeatureSpec) -> Tensor {
        let width = self.items[0].len() + spec.n_brands + spec.n_colors;
        let mut data = Vec::with_capacity(self.len() * width);
        for (l, item) in self.items.iter().enumerate() {
            data.extend_from_slice(item);
            let mut onehot = vec![0.0; spec.n_brands + spec.n_colors];
            onehot[self.brands[l] as usize] = 1.0;
            onehot[spec.n_brands + self.colors[l] as usize] = 1.0;
            data.extend_from_slice(&onehot);
        }
        Tensor::new(vec![self.len(), width], data).expect("validated group")
    }

    /// Query vector and item matrix as model inputs.
    pub fn model_inputs(&self, spec: FeatureSpec) -> ModelInputs {
        ModelInputs {
            query: Tensor::vector(self.query_features()),
            items: self.item_features(spec),
        }
    }

    /// Structural checks against the world that produced the group.
    pub fn validate(&self, world: &SyntheticWorldConfig) -> Result<()> {
        let len = self.items.len();
        let bad = |m: String| Err(Error::Data(format!("group {}: {m}", self.group_id)));
        if len == 0 || len > MAX_LIST_LEN {
            return bad(format!("{len} items"));
        }
        if self.query.len() != world.query_dim {
            return bad(format!("query has {} features, expected {}", self.query.len(), world.query_dim));
        }
        let ctx = self.context.as_ref().map_or(0, Vec::len);
        if ctx != world.context_dim {
            return bad(format!("context has {ctx} features, expected {}", world.context_dim));
        }
        if self.items.iter().any(|i| i.len() != world.item_dim) {
            return bad(format!("items must have {} features", world.item_dim));
        }
        if [self.brands.len(), self.colors.len(), self.rel_logits.len(), self.clicks.len(), self.logged.len()]
            .iter()
            .any(|&n| n != len)
        {
            return bad("per-item fields disagree in length".into());
        }
        if self.brands.iter().any(|&b| b as usize >= world.n_brands)
            || self.colors.iter().any(|&c| c as usize >= world.n_colors)
        {
            return bad("brand or color id out of range".into());
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.query) || !finite(&self.rel_logits) || !self.items.iter().all(|i| finite(i)) {
            return bad("non-finite feature".into());
        }
        if self.context.as_ref().is_some_and(|c| !finite(c)) {
            return bad("non-finite context".into());
        }
        if self.clicks.iter().any(|&c| c > 1) {
            return bad("clicks must be 0 or 1".into());
        }
        let label_ok = match world.label_mode {
            LabelMode::BinaryClick => self.label == 0.0 || self.label == 1.0,
            LabelMode::SoftIps | LabelMode::Behavioral => (0.0..=1.0).contains(&self.label),
        };
        if !label_ok {
            return bad(format!("label {} invalid for {:?}", self.label, world.label_mode));
        }
        if !(0.0..=1.0).contains(&self.logged_purchase) {
            return bad("logged purchase probability outside [0, 1]".into());
        }
        Ok(())
    }
}

/// Precomputed model inputs of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInputs {
    pub query: Tensor,
    pub items: Tensor,
}

/// Groups from one split together with the world they were drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub world: SyntheticWorldConfig,
    pub split: Split,
    pub groups: Vec<QueryGroup>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn model_inputs(&self) -> Vec<ModelInputs> {
        let spec = self.world.features();
        self.groups.iter().map(|g| g.model_inputs(spec)).collect()
    }
}

#[cfg(test)]
mod tests;
