use crate::error::{Error, Result};
use crate::linalg::Tensor;

/// A named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub name: String,
    pub tensor: Tensor,
}

/// Named parameter groups, always kept sorted by name.
///
/// The same container holds parameters, gradients and optimizer moments, so
/// every per-group loop can zip them positionally.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    groups: Vec<ParamGroup>,
}

impl ParamSet {
    pub fn new(groups: impl IntoIterator<Item = (String, Tensor)>) -> Result<Self> {
        let mut groups: Vec<ParamGroup> = groups
            .into_iter()
            .map(|(name, tensor)| ParamGroup { name, tensor })
            .collect();
        groups.sort_by(|a, b| a.name.cmp(&b.name));
        if groups.windows(2).any(|w| w[0].name == w[1].name) {
            return Err(Error::param("duplicate parameter group name"));
        }
        Ok(ParamSet { groups })
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            groups: self
                .groups
                .iter()
                .map(|g| ParamGroup {
                    name: g.name.clone(),
                    tensor: Tensor::zeros(g.tensor.dims()),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Total scalar count |θ|.
    pub fn param_count(&self) -> usize {
        self.groups.iter().map(|g| g.tensor.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.iter().map(|g| g.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamGroup> {
        self.groups.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamGroup> {
        self.groups.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.groups
            .binary_search_by(|g| g.name.as_str().cmp(name))
            .ok()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.groups[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.groups[i].tensor)
    }

    /// Lookup for groups the caller knows exist.
    pub(crate) fn expect(&self, name: &str) -> &Tensor {
        self.get(name)
            .unwrap_or_else(|| panic!("parameter group {name} missing"))
    }

    pub fn group_at(&self, i: usize) -> &ParamGroup {
        &self.groups[i]
    }

    /// Replaces or inserts a group, keeping the name order.
    pub fn insert(&mut self, name: &str, tensor: Tensor) {
        match self.groups.binary_search_by(|g| g.name.as_str().cmp(name)) {
            Ok(i) => self.groups[i].tensor = tensor,
            Err(i) => self.groups.insert(
                i,
                ParamGroup {
                    name: name.to_string(),
                    tensor,
                },
            ),
        }
    }

    /// True when both sets have the same names and shapes.
    pub fn conforms(&self, other: &ParamSet) -> bool {
        self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(&other.groups)
                .all(|(a, b)| a.name == b.name && a.tensor.same_shape(&b.tensor))
    }

    pub fn is_finite(&self) -> bool {
        self.groups.iter().all(|g| g.tensor.is_finite())
    }

    /// Euclidean norm of all groups concatenated.
    pub fn global_norm(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.tensor.sum_sq())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        self.groups.iter_mut().for_each(|g| g.tensor.scale_in_place(s));
    }

    /// Flattened concatenation in name order.
    pub fn flatten(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| g.tensor.data().iter().copied())
            .collect()
    }
}
