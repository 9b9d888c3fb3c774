use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::nn::{Scalar, Tensor};

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Entry<F> {
    name: String,
    tensor: Tensor<F>,
    trainable: bool,
}

/// Named learnable tensors and non-learnable buffers (batch-norm running
/// statistics) of every network in a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<Entry<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    /// Registers a learnable tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.push(name.into(), tensor, true)
    }

    /// Registers a buffer that is persisted but never optimized.
    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor<F>) -> ParamId {
        self.push(name.into(), tensor, false)
    }

    fn push(&mut self, name: String, tensor: Tensor<F>, trainable: bool) -> ParamId {
        assert!(self.find(&name).is_none(), "duplicate parameter name `{name}`");
        self.entries.push(Entry { name, tensor, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].tensor
    }

    /// Replaces a tensor's contents, keeping its shape.
    pub fn set(&mut self, id: ParamId, tensor: Tensor<F>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.tensor.shape() != tensor.shape() {
            return Err(invalid!(
                "`{}` has shape {:?}, got {:?}",
                entry.name,
                entry.tensor.shape(),
                tensor.shape()
            ));
        }
        entry.tensor = tensor;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id.0].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.ids().filter(move |&id| self.name(id).starts_with(prefix))
    }

    /// Number of learnable scalars among the tensors whose name starts with `prefix`.
    pub fn count_trainable(&self, prefix: &str) -> usize {
        self.ids_with_prefix(prefix)
            .filter(|&id| self.is_trainable(id))
            .map(|id| self.get(id).numel())
            .sum()
    }

    /// SHA-256 over names, shapes and raw values of the tensors under `prefix`.
    pub fn checksum(&self, prefix: &str) -> String {
        let mut hasher = Sha256::new();
        let mut bytes = Vec::new();
        for id in self.ids_with_prefix(prefix) {
            let t = self.get(id);
            hasher.update(self.name(id).as_bytes());
            for &d in t.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            bytes.clear();
            for &v in t.data() {
                v.write_le(&mut bytes);
            }
            hasher.update(&bytes);
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
