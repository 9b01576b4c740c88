use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered, named parameter tensors of one model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<NamedTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn add(&mut self, name: String, tensor: Tensor) -> ParamId {
        self.entries.push(NamedTensor { name, tensor });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|e| &e.tensor)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|e| &mut e.tensor)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().all(Tensor::all_finite)
    }

    /// Replaces every tensor with a loaded one, checking names and shapes.
    pub(crate) fn load(&mut self, loaded: Vec<NamedTensor>) -> Result<()> {
        if loaded.len() != self.entries.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, model layout has {}",
                loaded.len(),
                self.entries.len()
            )));
        }
        for (slot, new) in self.entries.iter_mut().zip(loaded) {
            if slot.name != new.name || slot.tensor.shape() != new.tensor.shape() {
                return Err(Error::Data(format!(
                    "checkpoint tensor {} {:?} does not match layout {} {:?}",
                    new.name,
                    new.tensor.shape(),
                    slot.name,
                    slot.tensor.shape()
                )));
            }
            if !new.tensor.all_finite() {
                return Err(Error::Data(format!("checkpoint tensor {} is not finite", new.name)));
            }
            *slot = new;
        }
        Ok(())
    }
}
