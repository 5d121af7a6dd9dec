//! Named parameter storage.
//!
//! Every parameter draws its initial values from an RNG stream derived from
//! `(seed, name)`, so initialization is independent of creation order — two
//! model variants that share a submodule get bit-identical weights for it.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::array::Array;
use super::element::Element;
use super::tape::{Tape, TensorId};
use crate::error::{Result, SeldError};
use crate::util::fnv1a64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitSpec {
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    UniformFanIn { fan_in: usize },
    Constant(f64),
}

#[derive(Clone, Debug)]
pub struct Parameter<E> {
    pub name: String,
    pub value: Array<E>,
    /// False for buffers (running statistics) that persist but take no grads.
    pub trainable: bool,
    pub init: InitSpec,
}

pub struct ParamStore<E: Element> {
    entries: Vec<Parameter<E>>,
    index: HashMap<String, usize>,
    seed: u64,
}

impl<E: Element> ParamStore<E> {
    pub fn new(seed: u64) -> Self {
        ParamStore { entries: Vec::new(), index: HashMap::new(), seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers a parameter, sampling its initial value deterministically
    /// from the store seed and the name path.
    pub fn register(
        &mut self,
        name: &str,
        shape: &[usize],
        init: InitSpec,
        trainable: bool,
    ) -> Result<usize> {
        if self.index.contains_key(name) {
            return Err(SeldError::Config(format!("duplicate parameter name {name}")));
        }
        let numel: usize = shape.iter().product();
        let data: Vec<E> = match init {
            InitSpec::Constant(c) => vec![E::from_f64(c); numel],
            InitSpec::UniformFanIn { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a64(name.as_bytes()));
                (0..numel).map(|_| E::from_f64(rng.random_range(-bound..bound))).collect()
            }
        };
        let value = Array::new(data, shape)?;
        self.entries.push(Parameter { name: name.to_string(), value, trainable, init });
        let id = self.entries.len() - 1;
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Parameter<E> {
        &self.entries[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Parameter<E> {
        &mut self.entries[idx]
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<E>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<E>> {
        self.entries.iter_mut()
    }

    /// Number of trainable scalar coordinates.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.value.numel()).sum()
    }

    /// Puts a parameter on a tape as a leaf; trainable parameters get
    /// gradients.
    pub fn leaf(&self, tape: &mut Tape<E>, idx: usize) -> Result<TensorId> {
        let p = &self.entries[idx];
        tape.leaf(p.value.data.clone(), &p.value.shape, p.trainable)
    }
}
