//! Reverse-mode differentiation over small dense `f64` tensors.
//!
//! Parameters live in a [`ParameterStore`] and are never copied onto a
//! [`Tape`]; ops that read weights refer to them by [`ParamId`]. A tape is
//! built per forward pass, differentiated once into a [`Gradients`] buffer
//! and then dropped.

mod adam;
mod checkpoint;
mod functional;
mod lstm;
mod tape;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use functional::{bce_loss, log_sum_exp, masked_softmax, sigmoid};
pub use lstm::LstmCell;
pub use tape::{Tape, Var};

use crate::error::{Error, Result};
use crate::rng::DebateRng;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {shape:?} needs {expected} values, got {}", values.len()),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    /// Xavier/Glorot uniform for a `[rows, cols]` weight.
    pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut DebateRng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let values = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
        Self {
            shape: vec![rows, cols],
            values,
        }
    }

    pub fn normal(shape: Vec<usize>, std_dev: f64, rng: &mut DebateRng) -> Self {
        let dist = Normal::new(0.0, std_dev).expect("positive std dev");
        let n = shape.iter().product();
        let values = (0..n).map(|_| dist.sample(rng)).collect();
        Self { shape, values }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of columns of a matrix (length of a vector).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AdamSlots {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    tensor: Tensor,
    slots: AdamSlots,
}

/// Named trainable tensors with their optimizer state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    by_name: BTreeMap<String, ParamId>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate parameter {name:?}")));
        }
        let id = ParamId(self.entries.len());
        let n = tensor.len();
        self.entries.push(Entry {
            name: name.clone(),
            tensor,
            slots: AdamSlots {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Format(format!("missing parameter {name:?}")))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`, in name order.
    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.by_name
            .range(prefix.to_owned()..)
            .take_while(move |(name, _)| name.starts_with(prefix))
            .map(|(_, &id)| id)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    /// Global update counter.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    pub(crate) fn slots(&self, id: ParamId) -> &AdamSlots {
        &self.entries[id.0].slots
    }

    pub(crate) fn tensor_and_slots_mut(&mut self, id: ParamId) -> (&mut Tensor, &mut AdamSlots) {
        let entry = &mut self.entries[id.0];
        (&mut entry.tensor, &mut entry.slots)
    }

    pub(crate) fn set_slots(&mut self, id: ParamId, slots: AdamSlots) {
        self.entries[id.0].slots = slots;
    }
}

/// Gradient accumulators, one optional dense buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    buffers: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn for_store(store: &ParameterStore) -> Self {
        Self {
            buffers: vec![None; store.len()],
        }
    }

    pub(crate) fn buffer(&mut self, id: ParamId, len: usize) -> &mut [f64] {
        self.buffers[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.buffers.get(id.0).and_then(|b| b.as_deref())
    }

    pub fn touched(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.buffers
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.as_deref().map(|b| (ParamId(i), b)))
    }

    pub fn scale(&mut self, factor: f64) {
        for buf in self.buffers.iter_mut().flatten() {
            buf.iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (i, other) in other.buffers.iter().enumerate() {
            if let Some(other) = other {
                let buf = self.buffers[i].get_or_insert_with(|| vec![0.0; other.len()]);
                buf.iter_mut().zip(other).for_each(|(a, b)| *a += b);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.buffers
            .iter()
            .flatten()
            .all(|b| b.iter().all(|g| g.is_finite()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.buffers
            .iter()
            .flatten()
            .flat_map(|b| b.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn clear(&mut self) {
        self.buffers.iter_mut().for_each(|b| *b = None);
    }
}
