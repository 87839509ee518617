use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;

use crate::error::{ensure, Result};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to one tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub(crate) store: u64,
    pub(crate) index: usize,
}

impl ParamId {
    pub fn index(&self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

/// Owns a set of learnable tensors and their gradient accumulators.
///
/// Each store gets a process-unique id, so a tape that mixes parameters from
/// several stores routes every gradient back to the store that owns it.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    params: Vec<Param>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    /// A clone is a distinct store: same values, fresh identity.
    fn clone(&self) -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            params: self.params.clone(),
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId {
            store: self.id,
            index: self.params.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(|index| ParamId {
            store: self.id,
            index,
        })
    }

    fn check(&self, id: ParamId) {
        assert_eq!(
            id.store, self.id,
            "parameter handle belongs to another store"
        );
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        self.check(id);
        &self.params[id.index].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        self.check(id);
        &mut self.params[id.index].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        self.check(id);
        &self.params[id.index].grad
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub(crate) fn accumulate(&mut self, index: usize, g: &Array2<f64>) {
        self.params[index].grad += g;
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copy all values from `other`, which must have the identical layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        ensure!(
            self.params.len() == other.params.len(),
            "store layout mismatch: {} vs {} tensors",
            self.params.len(),
            other.params.len()
        );
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            ensure!(
                dst.value.dim() == src.value.dim(),
                "shape mismatch for {}: {:?} vs {:?}",
                dst.name,
                dst.value.dim(),
                src.value.dim()
            );
            dst.value.assign(&src.value);
        }
        Ok(())
    }
}
