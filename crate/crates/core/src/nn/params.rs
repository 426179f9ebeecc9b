use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::{NnError, Tensor};

/// A named tensor plus whether the optimizer may touch it.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered map of named parameters. Insertion order is the canonical
/// iteration order and survives checkpoint round trips.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: IndexMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<(), NnError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(NnError::DuplicateParam(name));
        }
        self.entries.insert(name, Param { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor, NnError> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor, NnError> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total element count, optionally restricted to trainable tensors.
    pub fn param_count(&self, trainable_only: bool) -> usize {
        self.entries
            .values()
            .filter(|p| p.trainable || !trainable_only)
            .map(|p| p.value.len())
            .sum()
    }

    /// SHA-256 over names, shapes and raw little-endian bytes of every tensor.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.entries {
            h.update(name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// True when every tensor matches bit for bit.
    pub fn bitwise_eq(&self, other: &ParameterSet) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(other.entries.iter()).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.trainable == b.trainable
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Gradients keyed by parameter name, in the order they were produced.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    entries: IndexMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.entries.insert(name.into(), grad);
    }

    /// Adds `grad` into the stored gradient for `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, grad: Tensor) -> Result<(), NnError> {
        match self.entries.get_mut(name) {
            Some(existing) => {
                if existing.shape() != grad.shape() {
                    return Err(NnError::ShapeMismatch {
                        layer: name.to_string(),
                        expected: existing.shape().to_vec(),
                        actual: grad.shape().to_vec(),
                    });
                }
                for (a, b) in existing.data_mut().iter_mut().zip(grad.data()) {
                    *a += b;
                }
            }
            None => {
                self.entries.insert(name.to_string(), grad);
            }
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
