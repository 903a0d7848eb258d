use std::collections::BTreeMap;

use ndarray::Array2;

use super::tape::{Tape, Var};

/// Named parameter matrices plus non-trainable buffers (masks, running
/// statistics). Ordered by name so iteration and serialization are stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Array2<f64>>,
    buffers: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.params.insert(name.into(), value);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.buffers.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.params.get(name).or_else(|| self.buffers.get(name))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.params.get_mut(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.buffers.get_mut(name)
    }

    pub fn params(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.params.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut Array2<f64>)> {
        self.params.iter_mut()
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&String, &Array2<f64>)> {
        self.buffers.iter()
    }

    /// Number of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    /// Records every parameter and buffer on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let mut vars = BTreeMap::new();
        for (k, v) in self.params.iter().chain(self.buffers.iter()) {
            vars.insert(k.clone(), tape.leaf(v.clone()));
        }
        Bound { vars }
    }
}

/// Tape handles for the entries of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Handle for `name`. Panics if the network asks for a parameter it
    /// never created, which is a programming error.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(v) => *v,
            None => panic!("parameter {name:?} is not bound"),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}
