use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Which network a parameter set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    Generator,
    Discriminator,
}

/// Named parameters, iterated in lexicographic name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub role: ParamRole,
    params: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new(role: ParamRole) -> Self {
        ParamSet {
            role,
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(TensorError::Invariant(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| TensorError::Invariant(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| TensorError::Invariant(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// True when both sets hold the same names with the same shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape())
    }
}

/// Runtime He constant `√(2 / fan_in)` of the equalized learning rate.
pub fn equalized_scale(fan_in: usize) -> Result<f32> {
    if fan_in == 0 {
        return Err(TensorError::Config("fan_in must be positive".into()));
    }
    Ok((2.0 / fan_in as f64).sqrt() as f32)
}
