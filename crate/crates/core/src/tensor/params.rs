use std::collections::HashMap;

use super::{Result, Tensor, TensorError};

/// Named tensors in insertion order.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn from_pairs(pairs: Vec<(String, Tensor)>) -> Self {
        let index = pairs.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Self { entries: pairs, index }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t));
        Ok(())
    }

    /// Appends every entry of `other`, rejecting name clashes.
    pub fn extend(&mut self, other: ParamSet) -> Result<()> {
        for (n, t) in other.entries {
            self.insert(n, t)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    /// Looks up a parameter that must exist.
    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| TensorError::Contract(format!("missing parameter {name}")))
    }

    /// Replaces the value of an existing parameter, keeping its position.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let &i = self.index.get(name).ok_or_else(|| TensorError::Contract(format!("missing parameter {name}")))?;
        if self.entries[i].1.shape() != t.shape() {
            return Err(TensorError::Shape { op: "param_set", lhs: self.entries[i].1.shape(), rhs: t.shape() });
        }
        self.entries[i].1 = t;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn map(&self, mut f: impl FnMut(&str, &Tensor) -> Tensor) -> ParamSet {
        ParamSet::from_pairs(self.entries.iter().map(|(n, t)| (n.clone(), f(n, t))).collect())
    }

    /// Parameters whose name starts with `prefix`, in order.
    pub fn subset(&self, prefix: &str) -> ParamSet {
        ParamSet::from_pairs(self.entries.iter().filter(|(n, _)| n.starts_with(prefix)).cloned().collect())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.entries.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten): same names and shapes, new values.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.numel() {
            return Err(TensorError::Contract(format!(
                "flat vector has {} values, parameter set holds {}",
                flat.len(),
                self.numel()
            )));
        }
        let mut off = 0;
        let mut out = Vec::with_capacity(self.entries.len());
        for (n, t) in &self.entries {
            out.push((n.clone(), Tensor::new(t.shape(), flat[off..off + t.len()].to_vec())?));
            off += t.len();
        }
        Ok(ParamSet::from_pairs(out))
    }

    /// Differentiable `1 × numel` concatenation in parameter order.
    pub fn flatten_tensor(&self) -> Result<Tensor> {
        let parts = self.entries.iter().map(|(_, t)| t.flatten()).collect::<Result<Vec<_>>>()?;
        Tensor::concat_cols(&parts)
    }

    pub fn detach(&self) -> ParamSet {
        self.map(|_, t| t.detach())
    }
}
