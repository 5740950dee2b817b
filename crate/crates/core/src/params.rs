//! Named parameter storage and the per-forward-pass binding context.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    /// Row 0 is a padding row: never updated.
    pub pad_row: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor,
        pad_row: bool,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Param {
            name,
            tensor: tensor.with_requires_grad(true),
            pad_row,
        });
        Ok(ParamId(self.entries.len() - 1))
    }

    /// Weight matrix drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// where `fan_in` is the first axis (or the product of all but the last).
    pub fn weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        rng: &mut R,
    ) -> Result<ParamId> {
        let fan_in: usize = shape[..shape.len() - 1].iter().product();
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.add(name, Tensor::uniform(shape, -bound, bound, rng), false)
    }

    pub fn bias(&mut self, name: impl Into<String>, n: usize) -> Result<ParamId> {
        self.add(name, Tensor::zeros(&[n]), false)
    }

    pub fn constant(&mut self, name: impl Into<String>, n: usize, value: f64) -> Result<ParamId> {
        self.add(name, Tensor::full(&[n], value), false)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (p, g) in self.entries.iter_mut().zip(&grads.0) {
            if let Some(g) = g {
                p.tensor.accumulate_grad(g);
            }
        }
    }
}

/// Per-parameter gradients harvested from one backward pass.
#[derive(Debug, Default)]
pub struct Gradients(Vec<Option<Vec<f64>>>);

impl Gradients {
    /// One slot per parameter in store order.
    pub fn from_slots(slots: Vec<Option<Vec<f64>>>) -> Self {
        Gradients(slots)
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.0.get(id.0).and_then(|g| g.as_deref())
    }
}

/// One forward pass: a fresh graph, lazily bound parameters, the train/eval
/// switch and the dropout generator.
pub struct Ctx<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    training: bool,
    rng: &'a mut ChaCha8Rng,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, training: bool, rng: &'a mut ChaCha8Rng) -> Self {
        Ctx {
            g: Graph::new(),
            store,
            bound: vec![None; store.len()],
            training,
            rng,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        self.rng
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Graph handle of a parameter, recorded on first use.
    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.g.param(self.store.get(id));
        self.bound[id.0] = Some(v);
        v
    }

    pub fn backward(self, loss: Var) -> Result<Gradients> {
        self.backward_with_graph(loss).map(|(_, grads)| grads)
    }

    /// Like [`Ctx::backward`], also handing back the graph so gradients of
    /// non-parameter leaves can be read.
    pub fn backward_with_graph(mut self, loss: Var) -> Result<(Graph, Gradients)> {
        self.g.backward(loss)?;
        let grads = self
            .bound
            .iter()
            .map(|b| b.and_then(|v| self.g.grad(v).map(<[f64]>::to_vec)))
            .collect();
        Ok((self.g, Gradients(grads)))
    }
}
