//! Named parameter store with deterministic initialization and iteration.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// All trainable parameters, keyed by name. The map is ordered, so every
/// iteration (initialization, updates, checkpointing) is reproducible.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) {
        assert_eq!(data.len(), rows * cols, "param {name} shape mismatch");
        self.entries.insert(name.to_string(), Param { rows, cols, data });
    }

    /// Xavier-uniform weight matrix.
    pub fn init_linear(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, rows, cols, data);
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, rows, cols, vec![0.0; rows * cols]);
    }

    pub fn init_ones(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, rows, cols, vec![1.0; rows * cols]);
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(|p| p.data.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    /// Apply `f` to every stored value (test hook for zeroing heads etc.).
    pub fn map_param(&mut self, name: &str, f: impl Fn(f64) -> f64) -> Result<()> {
        let p = self
            .entries
            .get_mut(name)
            .ok_or_else(|| Error::invalid_argument(format!("unknown param {name}")))?;
        for v in &mut p.data {
            *v = f(*v);
        }
        Ok(())
    }
}

/// Per-forward binding of parameters onto a tape. Parameters bind lazily on
/// first use; after `backward` the recorded tensors hand back per-name
/// gradients.
pub struct Bindings<'a> {
    pub tape: Tape,
    store: &'a ParamStore,
    bound: std::cell::RefCell<BTreeMap<String, Tensor>>,
}

impl<'a> Bindings<'a> {
    pub fn new(tape: Tape, store: &'a ParamStore) -> Self {
        Bindings { tape, store, bound: std::cell::RefCell::new(BTreeMap::new()) }
    }

    /// The tape tensor for a named parameter.
    pub fn param(&self, name: &str) -> Tensor {
        if let Some(t) = self.bound.borrow().get(name) {
            return t.clone();
        }
        let p = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("unknown param {name}"));
        let t = self.tape.leaf(p.rows, p.cols, p.data.clone());
        self.bound.borrow_mut().insert(name.to_string(), t.clone());
        t
    }

    /// Gradients for every parameter bound during this forward pass.
    pub fn collect_grads(&self, grads: &super::tensor::Gradients) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, tensor) in self.bound.borrow().iter() {
            if let Some(g) = grads.get(tensor) {
                out.insert(name.clone(), g.to_vec());
            }
        }
        out
    }

    pub fn bound_names(&self) -> Vec<String> {
        self.bound.borrow().keys().cloned().collect()
    }
}
