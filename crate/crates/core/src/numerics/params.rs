use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Named parameter tensors, iterated in lexicographic name order.
///
/// The flattening order follows that iteration, so `flatten` / `unflatten`
/// are stable for a fixed set of names.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    /// Like [`get`](Self::get) but failing with a shape error naming the parameter.
    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::shape(format!("missing parameter '{name}'")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for t in self.tensors.values() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds a set with this set's names and shapes from a flat vector.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.num_scalars() {
            return Err(Error::shape(format!(
                "flat vector of {} for {} parameters",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        let mut tensors = BTreeMap::new();
        for (name, t) in &self.tensors {
            let n = t.len();
            tensors.insert(
                name.clone(),
                Tensor::new(t.shape().to_vec(), flat[offset..offset + n].to_vec())?,
            );
            offset += n;
        }
        Ok(ParamSet { tensors })
    }

    fn check_layout(&self, other: &ParamSet, what: &str) -> Result<()> {
        if self.tensors.len() != other.tensors.len()
            || self
                .tensors
                .iter()
                .zip(&other.tensors)
                .any(|((n1, t1), (n2, t2))| n1 != n2 || t1.shape() != t2.shape())
        {
            return Err(Error::shape(format!("{what}: parameter layouts differ")));
        }
        Ok(())
    }

    /// `self += factor * other`, requiring identical layouts.
    pub fn axpy(&mut self, factor: f64, other: &ParamSet) -> Result<()> {
        self.check_layout(other, "axpy")?;
        for (a, b) in self.tensors.values_mut().zip(other.tensors.values()) {
            a.axpy(factor, b)?;
        }
        Ok(())
    }

    /// Adds `other` into the tensors of the same name; names must exist here.
    pub fn accumulate(&mut self, other: &ParamSet) -> Result<()> {
        for (name, t) in &other.tensors {
            let dst = self
                .tensors
                .get_mut(name)
                .ok_or_else(|| Error::shape(format!("accumulate: unknown parameter '{name}'")))?;
            dst.axpy(1.0, t)?;
        }
        Ok(())
    }

    pub fn scale(&self, factor: f64) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.scale(factor)))
                .collect(),
        }
    }

    pub fn dot(&self, other: &ParamSet) -> Result<f64> {
        self.check_layout(other, "dot")?;
        self.tensors
            .values()
            .zip(other.tensors.values())
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Sub-set of parameters whose names start with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> ParamSet {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Union of two disjoint sets.
    pub fn merged(&self, other: &ParamSet) -> Result<ParamSet> {
        let mut out = self.clone();
        for (k, v) in &other.tensors {
            if out.tensors.insert(k.clone(), v.clone()).is_some() {
                return Err(Error::invalid(format!("duplicate parameter '{k}'")));
            }
        }
        Ok(out)
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            tensors: iter.into_iter().collect(),
        }
    }
}
