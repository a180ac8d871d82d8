use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    ConvWeight,
    BnGamma,
    BnBeta,
    LinearWeight,
    LinearBias,
}

impl ParamKind {
    /// Only conv and linear weights are subject to weight decay.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::LinearWeight)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ParamKind::ConvWeight => 0,
            ParamKind::BnGamma => 1,
            ParamKind::BnBeta => 2,
            ParamKind::LinearWeight => 3,
            ParamKind::LinearBias => 4,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ParamKind::ConvWeight,
            1 => ParamKind::BnGamma,
            2 => ParamKind::BnBeta,
            3 => ParamKind::LinearWeight,
            4 => ParamKind::LinearBias,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f64> {
    pub path: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    /// SGD momentum buffer; created on the first optimizer step.
    pub velocity: Option<Tensor<T>>,
}

/// Named parameters in creation order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f64> {
    params: Vec<Param<T>>,
    by_path: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_path: HashMap::new(),
        }
    }

    pub fn insert(&mut self, path: impl Into<String>, kind: ParamKind, value: Tensor<T>) -> Result<ParamId> {
        let path = path.into();
        if self.by_path.contains_key(&path) {
            return Err(Error::Config(format!("duplicate parameter path '{path}'")));
        }
        let id = self.params.len();
        self.by_path.insert(path.clone(), id);
        self.params.push(Param {
            path,
            kind,
            value,
            grad: None,
            velocity: None,
        });
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count over all parameters.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn find(&self, path: &str) -> Option<&Param<T>> {
        self.by_path.get(path).map(|&i| &self.params[i])
    }

    pub fn find_mut(&mut self, path: &str) -> Option<&mut Param<T>> {
        self.by_path.get(path).map(|&i| &mut self.params[i])
    }

    pub fn value(&self, path: &str) -> Option<&Tensor<T>> {
        self.find(path).map(|p| &p.value)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.path.as_str())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Same paths and shapes in the same order.
    pub fn same_layout(&self, other: &ParamStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.path == b.path && a.kind == b.kind && a.value.shape() == b.value.shape())
    }
}
