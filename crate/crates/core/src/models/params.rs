use std::collections::HashMap;
use std::sync::Arc;

use crate::autodiff::{Float, Tape, Tensor, Var};

/// Named trainable tensors in a fixed order.
///
/// Storage is reference counted so a tape can hold the current values without
/// copying; once the tape is dropped, [`Params::tensor_mut`] updates in place.
#[derive(Clone, Debug)]
pub struct Params<T: Float> {
    names: Vec<String>,
    values: Vec<Arc<Tensor<T>>>,
    index: HashMap<String, usize>,
}

impl<T: Float> Default for Params<T> {
    fn default() -> Self {
        Params {
            names: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Float> Params<T> {
    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(Arc::new(value));
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &*self.values[i])
    }

    pub fn tensor(&self, i: usize) -> &Tensor<T> {
        &self.values[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(|v| &**v))
    }

    /// Total number of trainable scalars.
    pub fn count_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Registers every parameter on `tape` as a `requires_grad` leaf.
    pub fn attach<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.values
            .iter()
            .map(|v| tape.leaf_shared(Arc::clone(v), true))
            .collect()
    }

    /// Registers every parameter as a constant (evaluation without gradients).
    pub fn attach_frozen<'t>(&self, tape: &'t Tape<T>) -> Vec<Var<'t, T>> {
        self.values
            .iter()
            .map(|v| tape.leaf_shared(Arc::clone(v), false))
            .collect()
    }

    /// All values concatenated in parameter order.
    pub fn flatten(&self) -> Vec<T> {
        self.values.iter().flat_map(|v| v.data().iter().copied()).collect()
    }

    /// Splits a flat variable (as produced by [`Params::flatten`]) back into one
    /// variable per parameter.
    pub fn unflatten<'t>(&self, flat: Var<'t, T>) -> crate::Result<Vec<Var<'t, T>>> {
        let mut offset = 0;
        self.values
            .iter()
            .map(|v| {
                let part = flat.slice(0, offset, offset + v.len())?.reshape(v.shape())?;
                offset += v.len();
                Ok(part)
            })
            .collect()
    }
}
