//! Named parameter sets. BTreeMap keeps iteration (and on-disk) order
//! deterministic.

use std::collections::BTreeMap;

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.insert(name.into(), t.with_grad());
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<(), TensorError> {
        match self.entries.get_mut(name) {
            Some(slot) => {
                if slot.shape() != t.shape() {
                    return Err(TensorError::Shape(format!(
                        "parameter {name:?}: {:?} vs {:?}",
                        slot.shape(),
                        t.shape()
                    )));
                }
                *slot = t.with_grad();
                Ok(())
            }
            None => Err(TensorError::Contract(format!("unknown parameter {name:?}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Merge another set under a name prefix.
    pub fn absorb(&mut self, prefix: &str, other: ParamSet) {
        for (name, t) in other.entries {
            self.entries.insert(format!("{prefix}.{name}"), t);
        }
    }

    /// Entries whose names start with `prefix`, names kept intact.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet {
            entries: self
                .entries
                .iter()
                .filter(|(name, _)| name.starts_with(prefix))
                .map(|(name, t)| (name.clone(), t.clone()))
                .collect(),
        }
    }

    /// Merge entries of another set, overwriting on collision.
    pub fn merge(&mut self, other: ParamSet) {
        self.entries.extend(other.entries);
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|t| t.numel()).sum()
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        let mut set = ParamSet::new();
        for (name, t) in iter {
            set.insert(name, t);
        }
        set
    }
}
