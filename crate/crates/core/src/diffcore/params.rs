use super::{DiffError, Tensor};

/// Ordered collection of named tensors.
///
/// Iteration order is insertion order, which also defines the layout of
/// [`ParamSet::flatten`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), DiffError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(DiffError::DuplicateName(name));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
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

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Same names and shapes as `self`, values taken from `flat`.
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet, DiffError> {
        let mut out = self.clone();
        out.assign_flat(flat)?;
        Ok(out)
    }

    /// Overwrites every value in place from `flat`.
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<(), DiffError> {
        if flat.len() != self.num_params() {
            return Err(DiffError::FlatLength {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for (_, t) in &mut self.entries {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
