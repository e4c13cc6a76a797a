use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, PartialEq)]
struct Entry<T> {
    tensor: Tensor<T>,
    trainable: bool,
}

/// Named tensors of a model, iterated in lexicographic name order.
///
/// Non-trainable entries hold buffers such as batch-norm running statistics.
#[derive(Clone, PartialEq)]
pub struct ParameterStore<T> {
    entries: BTreeMap<String, Entry<T>>,
}

impl<T: Element> std::fmt::Debug for ParameterStore<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_map()
            .entries(self.entries.iter().map(|(k, e)| (k, e.tensor.shape())))
            .finish()
    }
}

impl<T: Element> Default for ParameterStore<T> {
    fn default() -> Self {
        ParameterStore {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: Element> ParameterStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a new entry; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>, trainable: bool) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, Entry { tensor, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// Replaces an existing entry's value; the shape must not change.
    pub fn set(&mut self, name: &str, tensor: Tensor<T>) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))?;
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::shape(
                "parameter update",
                format!("`{name}` is {:?}, update is {:?}", entry.tensor.shape(), tensor.shape()),
            ));
        }
        entry.tensor = tensor;
        Ok(())
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.entries.get(name).is_some_and(|e| e.trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `(name, tensor, trainable)` in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>, bool)> {
        self.entries
            .iter()
            .map(|(k, e)| (k.as_str(), &e.tensor, e.trainable))
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.iter().filter(|e| e.2).map(|(n, t, _)| (n, t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Number of trainable scalars.
    pub fn trainable_numel(&self) -> usize {
        self.trainable().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Element>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        Entry {
                            tensor: e.tensor.cast(),
                            trainable: e.trainable,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|e| e.tensor.all_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lexicographic_iteration_and_unique_names() {
        let mut s = ParameterStore::<f32>::new();
        s.insert("b.weight", Tensor::zeros(&[2]).unwrap(), true).unwrap();
        s.insert("a.running_mean", Tensor::zeros(&[3]).unwrap(), false).unwrap();
        s.insert("a.weight", Tensor::zeros(&[4]).unwrap(), true).unwrap();
        assert!(s.insert("a.weight", Tensor::zeros(&[1]).unwrap(), true).is_err());
        let names: Vec<_> = s.names().collect();
        assert_eq!(names, ["a.running_mean", "a.weight", "b.weight"]);
        assert_eq!(s.trainable_numel(), 6);
        assert!(s.set("a.weight", Tensor::zeros(&[5]).unwrap()).is_err());
    }
}
