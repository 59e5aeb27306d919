use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors with per-name learning-rate multipliers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    lr_mult: Vec<f64>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, lr_mult: f64) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        if !(lr_mult > 0.0 && lr_mult.is_finite()) {
            return Err(Error::Config(format!(
                "learning-rate multiplier for `{name}` must be positive, got {lr_mult}"
            )));
        }
        let id = self.names.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.lr_mult.push(lr_mult);
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn lr_mult(&self, id: ParamId) -> f64 {
        self.lr_mult[id.0]
    }

    pub fn set_lr_mult(&mut self, id: ParamId, lr_mult: f64) -> Result<()> {
        if !(lr_mult > 0.0 && lr_mult.is_finite()) {
            return Err(Error::Config(format!(
                "learning-rate multiplier for `{}` must be positive, got {lr_mult}",
                self.names[id.0]
            )));
        }
        self.lr_mult[id.0] = lr_mult;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn to_records(&self) -> Vec<ParamRecord> {
        self.ids()
            .map(|id| ParamRecord {
                name: self.name(id).to_string(),
                shape: self.get(id).shape.clone(),
                lr_mult: self.lr_mult(id),
                values: self.get(id).data.clone(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<ParamRecord>) -> Result<Self> {
        let mut store = ParamStore::new();
        for r in records {
            if r.shape.len() != 2 || r.shape[0] * r.shape[1] != r.values.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?} but {} values",
                    r.name,
                    r.shape,
                    r.values.len()
                )));
            }
            store.insert(&r.name, Tensor::new(r.shape[0], r.shape[1], r.values), r.lr_mult)?;
        }
        Ok(store)
    }
}

/// Portable form of one parameter: name, shape and row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub lr_mult: f64,
    pub values: Vec<f64>,
}

pub fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("standard deviation is finite and non-negative");
    Tensor::from_fn(rows, cols, |_, _| normal.sample(rng))
}
