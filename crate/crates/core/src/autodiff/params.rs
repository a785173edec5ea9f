use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{AutodiffError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Vec<f64>,
}

/// Serialized form of one parameter tensor in a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Ordered collection of parameters. Gradients accumulate until
/// [`ParamStore::zero_grad`] is called.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let grad = vec![0.0; value.numel()];
        self.params.push(Parameter {
            name: name.into(),
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].grad
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Euclidean norm of all accumulated gradients.
    pub fn grad_norm(&self) -> f64 {
        crate::math::sqrt(self.params.iter().flat_map(|p| p.grad.iter()).map(|g| g * g).sum())
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.params
            .iter()
            .map(|p| TensorRecord {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                values: p.value.values().to_vec(),
            })
            .collect()
    }

    /// Overwrites values from checkpoint records, matched by name and shape.
    pub fn load_records(&mut self, records: &[TensorRecord]) -> Result<(), AutodiffError> {
        if records.len() != self.params.len() {
            return Err(AutodiffError::Checkpoint(alloc::format!(
                "expected {} tensors, found {}",
                self.params.len(),
                records.len()
            )));
        }
        for rec in records {
            let id = self
                .find(&rec.name)
                .ok_or_else(|| AutodiffError::Checkpoint(alloc::format!("unknown tensor `{}`", rec.name)))?;
            let t = Tensor::new(rec.shape.clone(), rec.values.clone())?;
            if t.shape() != self.value(id).shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "load_records",
                    left: self.value(id).shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(AutodiffError::NonFinite { op: "load_records" });
            }
            *self.value_mut(id) = t;
        }
        Ok(())
    }
}
