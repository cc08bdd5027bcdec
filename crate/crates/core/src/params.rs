//! Named parameter storage shared by every model component.
//!
//! Components hold [`ParamId`] handles rather than tensors, so two paths
//! that name the same id read and update one storage slot.

use std::collections::HashMap;

use crate::autodiff::{Gradients, Graph, NodeId};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, value, frozen: false });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
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

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn total_len(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_all(&mut self) {
        for p in &mut self.params {
            p.value.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

/// Per-parameter gradients, aligned with a [`ParamSet`].
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    pub grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    pub fn global_norm(&self) -> T {
        self.grads.iter().flatten().map(|g| g.sq_norm()).sum::<T>().sqrt()
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v = *v * s);
        }
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: T) -> T {
        let norm = self.global_norm();
        if norm > max_norm && norm > T::zero() {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Lazily binds parameters into a graph, once each.
///
/// Frozen parameters are bound as constants and never receive gradients.
#[derive(Debug, Default)]
pub struct Binder {
    nodes: HashMap<ParamId, NodeId>,
}

impl Binder {
    pub fn new() -> Self {
        Binder { nodes: HashMap::new() }
    }

    pub fn bind<T: Real>(&mut self, g: &mut Graph<T>, params: &ParamSet<T>, id: ParamId) -> NodeId {
        *self.nodes.entry(id).or_insert_with(|| {
            let p = params.param(id);
            if p.frozen {
                g.input(p.value.clone())
            } else {
                g.param(p.value.clone())
            }
        })
    }

    pub fn node(&self, id: ParamId) -> Option<NodeId> {
        self.nodes.get(&id).copied()
    }

    /// Collects gradients for every bound, trainable parameter.
    pub fn collect<T: Real>(&self, params: &ParamSet<T>, mut grads: Gradients<T>) -> ParamGrads<T> {
        let mut out = vec![None; params.len()];
        for (&pid, &nid) in &self.nodes {
            out[pid.0] = grads.take(nid);
        }
        ParamGrads { grads: out }
    }
}

/// A graph under construction together with the parameters it reads.
pub struct Forward<'p, T> {
    pub graph: Graph<T>,
    pub binder: Binder,
    pub params: &'p ParamSet<T>,
}

impl<'p, T: Real> Forward<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Forward { graph: Graph::new(), binder: Binder::new(), params }
    }

    pub fn bind(&mut self, id: ParamId) -> NodeId {
        self.binder.bind(&mut self.graph, self.params, id)
    }

    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.graph.input(value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        self.graph.value(id)
    }

    /// Back-propagates from `loss` and returns per-parameter gradients.
    pub fn gradients(self, loss: NodeId) -> crate::error::Result<ParamGrads<T>> {
        let grads = self.graph.backward(loss)?;
        Ok(self.binder.collect(self.params, grads))
    }
}

/// Tensor with entries drawn uniformly from `[-half_width, half_width]`.
pub fn uniform<T: Real>(rng: &mut impl rand::Rng, shape: &[usize], half_width: f64) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-half_width..=half_width))).collect();
    Tensor::new(shape.to_vec(), data).expect("consistent shape")
}
