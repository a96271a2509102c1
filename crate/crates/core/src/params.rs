//! Named parameter tables.

use std::collections::btree_map;
use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters keyed by dotted name (`conv1.weight`, `block2.0.mid.gamma`, ...).
/// Iteration order is lexicographic, which keeps every traversal deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

/// How a freshly declared parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with std `sqrt(2 / fan_in)`.
    HeNormal {
        fan_in: usize,
    },
    Zeros,
    Ones,
    Constant(f64),
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), value)
    }

    pub fn iter(&self) -> btree_map::Iter<'_, String, Tensor> {
        self.tensors.iter()
    }

    /// Keeps only the parameters whose name satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.tensors.retain(|name, _| keep(name));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Draws a value for `name` with the given shape and initializer.
    pub fn declare(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut impl Rng) -> Result<()> {
        let t = match init {
            Init::HeNormal { fan_in } => {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                    .map_err(|e| Error::InvalidArgument(format!("he init for {name}: {e}")))?;
                Tensor::from_fn(shape, |_| normal.sample(rng))?
            }
            Init::Zeros => Tensor::zeros(shape)?,
            Init::Ones => Tensor::ones(shape)?,
            Init::Constant(v) => Tensor::full(shape, v)?,
        };
        if self.tensors.insert(name.to_string(), t).is_some() {
            return Err(Error::InvalidArgument(format!("parameter `{name}` declared twice")));
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for ParamStore {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            tensors: iter.into_iter().collect(),
        }
    }
}

impl<'a> IntoIterator for &'a ParamStore {
    type Item = (&'a String, &'a Tensor);
    type IntoIter = btree_map::Iter<'a, String, Tensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.tensors.iter()
    }
}
