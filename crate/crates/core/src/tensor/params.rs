use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A learnable tensor with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    /// Columns pinned at zero that never receive gradient (PAD rows of lookup tables).
    pub frozen_cols: Vec<usize>,
}

/// Borrowed view of one parameter: name, shape, value and gradient.
#[derive(Clone, Copy, Debug)]
pub struct ParamView<'a> {
    pub id: ParamId,
    pub name: &'a str,
    pub shape: [usize; 2],
    pub value: &'a Matrix,
    pub grad: &'a Matrix,
}

/// Owner of every learnable tensor. Each tensor is registered exactly once;
/// models hold [`ParamId`] handles into the store.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Config(format!("parameter `{name}` registered twice")));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("parameter `{name}` has non-finite entries")));
        }
        let id = ParamId(self.params.len());
        let grad = Matrix::zeros(value.raw_dim());
        self.params.push(Param {
            name: name.clone(),
            value,
            grad,
            frozen_cols: Vec::new(),
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    /// Pin column `col` of `id` to zero.
    pub fn freeze_column(&mut self, id: ParamId, col: usize) {
        let p = &mut self.params[id.0];
        p.value.column_mut(col).fill(0.0);
        p.grad.column_mut(col).fill(0.0);
        if !p.frozen_cols.contains(&col) {
            p.frozen_cols.push(col);
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.params[id.0].value
    }

    /// Mutable access to a value. Frozen columns are re-zeroed by
    /// [`ParamStore::enforce_frozen`].
    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.params[id.0].value
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Every parameter exactly once, in registration order.
    pub fn views(&self) -> Vec<ParamView<'_>> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| ParamView {
                id: ParamId(i),
                name: &p.name,
                shape: [p.value.nrows(), p.value.ncols()],
                value: &p.value,
                grad: &p.grad,
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.params.iter_mut().zip(&grads.by_param) {
            if let Some(g) = g {
                p.grad += g;
                for &c in &p.frozen_cols {
                    p.grad.column_mut(c).fill(0.0);
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale gradients so that their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if max_norm > 0.0 && norm > max_norm {
            let scale = max_norm / norm;
            for p in &mut self.params {
                p.grad.mapv_inplace(|g| g * scale);
            }
        }
        norm
    }

    pub fn enforce_frozen(&mut self) {
        for p in &mut self.params {
            for &c in &p.frozen_cols {
                p.value.column_mut(c).fill(0.0);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    pub(crate) by_param: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.by_param.get(id.0).and_then(|g| g.as_ref())
    }

    /// True when no gradient at all reached `id`.
    pub fn is_untouched(&self, id: ParamId) -> bool {
        self.get(id).is_none()
    }
}
