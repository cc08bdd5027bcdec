//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! A [`Graph`] evaluates every operation eagerly when the node is recorded,
//! so node order is always a valid topological order. [`Graph::backward`]
//! walks the tape once in reverse and accumulates gradients only along paths
//! that reach a trainable leaf.

use crate::error::{NocError, Result};
use crate::scalar::{Real, LOG_EPS};
use crate::tensor::{dot, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Log(NodeId),
    Clamp(NodeId, T, T),
    Affine(NodeId, T),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Pick(NodeId, usize),
    Row(NodeId, usize),
    Slice(NodeId, usize),
    Sum(NodeId),
    Dot(NodeId, NodeId),
    AddN(Vec<NodeId>),
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
    trainable: bool,
}

/// Elementwise operations accepted by [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise<T> {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Relu,
    /// Natural log with the argument clamped below at [`LOG_EPS`].
    Log,
    Clamp(T, T),
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    trainable: Vec<bool>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `id`, present only for trainable leaves.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        if self.trainable.get(id.0).copied().unwrap_or(false) {
            self.grads[id.0].as_ref()
        } else {
            None
        }
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        if self.trainable.get(id.0).copied().unwrap_or(false) {
            self.grads[id.0].take()
        } else {
            None
        }
    }

    /// Ids of trainable leaves that received a gradient.
    pub fn parameters(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.trainable
            .iter()
            .enumerate()
            .filter(|&(i, &t)| t && self.grads[i].is_some())
            .map(|(i, _)| NodeId(i))
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax_slice<T: Real>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - m).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Numerically stable log-softmax.
pub fn log_softmax_slice<T: Real>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let z: T = x.iter().map(|&v| (v - m).exp()).sum();
    let lz = m + z.ln();
    x.iter().map(|&v| v - lz).collect()
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NocError::Dimension(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, shape: &[usize], f: impl Fn(&mut [T])) {
    let g = slot.get_or_insert_with(|| Tensor::zeros(shape));
    f(g.data_mut());
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// Constant leaf; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push_leaf(value, true)
    }

    pub fn is_trainable(&self, id: NodeId) -> bool {
        self.nodes[id.0].trainable
    }

    fn push_leaf(&mut self, value: Tensor<T>, trainable: bool) -> NodeId {
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad: trainable, trainable });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad, trainable: false });
        NodeId(self.nodes.len() - 1)
    }

    /// Matrix product of `a: [m, k]` and `b: [k, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(NocError::Dimension(format!(
                "matmul: cannot multiply {:?} by {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let arow = va.row(i);
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &aip) in arow.iter().enumerate().take(k) {
                for (o, &bpj) in orow.iter_mut().zip(vb.row(p)) {
                    *o = *o + aip * bpj;
                }
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), value, &[a, b]))
    }

    /// Matrix-vector product of `w: [m, k]` and `x: [k]`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (vw, vx) = (self.value(w), self.value(x));
        if vw.shape().len() != 2 || vx.shape().len() != 1 || vw.shape()[1] != vx.shape()[0] {
            return Err(NocError::Dimension(format!(
                "matvec: cannot multiply {:?} by {:?}",
                vw.shape(),
                vx.shape()
            )));
        }
        let out: Vec<T> = (0..vw.rows()).map(|i| dot(vw.row(i), vx.data())).collect();
        let value = Tensor::vector(out);
        Ok(self.push(Op::MatVec(w, x), value, &[w, x]))
    }

    fn binary(&mut self, a: NodeId, b: NodeId, what: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, what)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), v, &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), v, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), v, &[a, b]))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.tanh());
        self.push(Op::Tanh(a), v, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x.max(T::zero()));
        self.push(Op::Relu(a), v, &[a])
    }

    /// `ln(max(x, LOG_EPS))`.
    pub fn log(&mut self, a: NodeId) -> NodeId {
        let eps = T::lit(LOG_EPS);
        let v = self.value(a).map(|x| x.max(eps).ln());
        self.push(Op::Log(a), v, &[a])
    }

    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> NodeId {
        let v = self.value(a).map(|x| x.max(lo).min(hi));
        self.push(Op::Clamp(a, lo, hi), v, &[a])
    }

    /// `scale * a`.
    pub fn scale(&mut self, a: NodeId, scale: T) -> NodeId {
        let v = self.value(a).map(|x| x * scale);
        self.push(Op::Affine(a, scale), v, &[a])
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let ones = self.input(Tensor::filled(self.value(a).shape(), T::one()));
        // shapes agree by construction
        let v = self.binary(ones, a, "one_minus", |x, y| x - y).expect("same shape");
        self.push(Op::Sub(ones, a), v, &[ones, a])
    }

    pub fn elementwise(&mut self, op: Elementwise<T>, a: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let need_b = || {
            b.ok_or_else(|| NocError::Argument(format!("{op:?} needs a second operand")))
        };
        Ok(match op {
            Elementwise::Add => self.add(a, need_b()?)?,
            Elementwise::Sub => self.sub(a, need_b()?)?,
            Elementwise::Mul => self.mul(a, need_b()?)?,
            Elementwise::Sigmoid => self.sigmoid(a),
            Elementwise::Tanh => self.tanh(a),
            Elementwise::Relu => self.relu(a),
            Elementwise::Log => self.log(a),
            Elementwise::Clamp(lo, hi) => self.clamp(a, lo, hi),
        })
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.shape().len() != 1 {
            return Err(NocError::Argument(format!("softmax expects a vector, got {:?}", v.shape())));
        }
        let v = Tensor::vector(softmax_slice(v.data()));
        Ok(self.push(Op::Softmax(a), v, &[a]))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        if v.shape().len() != 1 {
            return Err(NocError::Argument(format!(
                "log_softmax expects a vector, got {:?}",
                v.shape()
            )));
        }
        let v = Tensor::vector(log_softmax_slice(v.data()));
        Ok(self.push(Op::LogSoftmax(a), v, &[a]))
    }

    /// Scalar element `index` of a vector.
    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(a);
        if index >= v.len() {
            return Err(NocError::Index { index, size: v.len() });
        }
        let out = Tensor::scalar(v.data()[index]);
        Ok(self.push(Op::Pick(a, index), out, &[a]))
    }

    /// Row `index` of a matrix, as a vector.
    pub fn row(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(a);
        if v.shape().len() != 2 {
            return Err(NocError::Dimension(format!("row lookup on non-matrix {:?}", v.shape())));
        }
        if index >= v.rows() {
            return Err(NocError::Index { index, size: v.rows() });
        }
        let out = Tensor::vector(v.row(index).to_vec());
        Ok(self.push(Op::Row(a, index), out, &[a]))
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        if v.shape().len() != 1 || len == 0 || start + len > v.len() {
            return Err(NocError::Dimension(format!(
                "slice [{start}, {}) of {:?}",
                start + len,
                v.shape()
            )));
        }
        let out = Tensor::vector(v.data()[start..start + len].to_vec());
        Ok(self.push(Op::Slice(a, start), out, &[a]))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out, &[a])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "dot")?;
        let out = Tensor::scalar(dot(va.data(), vb.data()));
        Ok(self.push(Op::Dot(a, b), out, &[a, b]))
    }

    /// Sum of several same-shaped nodes.
    pub fn add_n(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let first = *items
            .first()
            .ok_or_else(|| NocError::Argument("add_n of an empty list".into()))?;
        let mut acc = self.value(first).clone();
        for &id in &items[1..] {
            let v = self.value(id);
            same_shape(&acc, v, "add_n")?;
            for (a, &b) in acc.data_mut().iter_mut().zip(v.data()) {
                *a = *a + b;
            }
        }
        Ok(self.push(Op::AddN(items.to_vec()), acc, items))
    }

    /// Reverse pass from a scalar `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NocError::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n];
        grads[loss.0] = Some(Tensor::filled(lv.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients { grads, trainable: self.nodes.iter().map(|n| n.trainable).collect() })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if self.wants(*a) {
                    // dA = G · Bᵀ
                    accumulate(&mut grads[a.0], va.shape(), |ga| {
                        for i in 0..m {
                            let grow = &gd[i * n..(i + 1) * n];
                            for p in 0..k {
                                ga[i * k + p] = ga[i * k + p] + dot(grow, vb.row(p));
                            }
                        }
                    });
                }
                if self.wants(*b) {
                    // dB = Aᵀ · G
                    accumulate(&mut grads[b.0], vb.shape(), |gb| {
                        for i in 0..m {
                            let grow = &gd[i * n..(i + 1) * n];
                            for p in 0..k {
                                let aip = va.data()[i * k + p];
                                for (o, &gij) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                    *o = *o + aip * gij;
                                }
                            }
                        }
                    });
                }
            }
            Op::MatVec(w, x) => {
                let (vw, vx) = (self.value(*w), self.value(*x));
                let k = vx.len();
                if self.wants(*w) {
                    accumulate(&mut grads[w.0], vw.shape(), |gw| {
                        for (i, &gi) in gd.iter().enumerate() {
                            if gi == T::zero() {
                                continue;
                            }
                            for (o, &xj) in gw[i * k..(i + 1) * k].iter_mut().zip(vx.data()) {
                                *o = *o + gi * xj;
                            }
                        }
                    });
                }
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], vx.shape(), |gx| {
                        for (i, &gi) in gd.iter().enumerate() {
                            if gi == T::zero() {
                                continue;
                            }
                            for (o, &wij) in gx.iter_mut().zip(vw.row(i)) {
                                *o = *o + gi * wij;
                            }
                        }
                    });
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.shape(), |ga| {
                        for (o, &v) in ga.iter_mut().zip(gd) {
                            *o = *o + v;
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.shape(), |gb| {
                        for (o, &v) in gb.iter_mut().zip(gd) {
                            *o = *o + sign * v;
                        }
                    });
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.shape(), |ga| {
                        for ((o, &v), &y) in ga.iter_mut().zip(gd).zip(vb.data()) {
                            *o = *o + v * y;
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.shape(), |gb| {
                        for ((o, &v), &x) in gb.iter_mut().zip(gd).zip(va.data()) {
                            *o = *o + v * x;
                        }
                    });
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                accumulate(&mut grads[a.0], g.shape(), |ga| {
                    for ((o, &v), &s) in ga.iter_mut().zip(gd).zip(y) {
                        *o = *o + v * s * (T::one() - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                accumulate(&mut grads[a.0], g.shape(), |ga| {
                    for ((o, &v), &t) in ga.iter_mut().zip(gd).zip(y) {
                        *o = *o + v * (T::one() - t * t);
                    }
                });
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                accumulate(&mut grads[a.0], g.shape(), |ga| {
                    for ((o, &v), &xi) in ga.iter_mut().zip(gd).zip(x) {
                        if xi > T::zero() {
                            *o = *o + v;
                        }
                    }
                });
            }
            Op::Log(a) => {
                let x = self.value(*a).data();
                let eps = T::lit(LOG_EPS);
                accumulate(&mut grads[a.0], g.shape(), |ga| {
                    for ((o, &v), &xi) in ga.iter_mut().zip(gd).zip(x) {
                        if xi >= eps {
                            *o = *o + v / xi;
                        }
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a).data();
                accumulate(&mut grads[a.0], g.shape(), |ga| {
                    for ((o, &v), &xi) in ga.iter_mut().zip(gd).zip(x) {
                        if xi >= *lo && xi <= *hi {
                            *o = *o + v;
                        }
                    }
                });
            }
            Op::Affine(a, scale) => {
                accumulate(&mut grads[a.0], g.shape(), |ga| {
                    for (o, &v) in ga.iter_mut().zip(gd) {
                        *o = *o + v * *scale;
                    }
                });
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let inner = dot(gd, y);
                accumulate(&mut grads[a.0], g.shape(), |ga| {
                    for ((o, &v), &s) in ga.iter_mut().zip(gd).zip(y) {
                        *o = *o + s * (v - inner);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let y = node.value.data();
                let total: T = gd.iter().copied().sum();
                accumulate(&mut grads[a.0], g.shape(), |ga| {
                    for ((o, &v), &ls) in ga.iter_mut().zip(gd).zip(y) {
                        *o = *o + v - ls.exp() * total;
                    }
                });
            }
            Op::Pick(a, index) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(&mut grads[a.0], &shape, |ga| ga[*index] = ga[*index] + gd[0]);
            }
            Op::Row(a, index) => {
                let va = self.value(*a);
                let c = va.cols();
                accumulate(&mut grads[a.0], va.shape(), |ga| {
                    for (o, &v) in ga[index * c..(index + 1) * c].iter_mut().zip(gd) {
                        *o = *o + v;
                    }
                });
            }
            Op::Slice(a, start) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(&mut grads[a.0], &shape, |ga| {
                    for (o, &v) in ga[*start..*start + gd.len()].iter_mut().zip(gd) {
                        *o = *o + v;
                    }
                });
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                accumulate(&mut grads[a.0], &shape, |ga| {
                    for o in ga.iter_mut() {
                        *o = *o + gd[0];
                    }
                });
            }
            Op::Dot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], va.shape(), |ga| {
                        for (o, &y) in ga.iter_mut().zip(vb.data()) {
                            *o = *o + gd[0] * y;
                        }
                    });
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], vb.shape(), |gb| {
                        for (o, &x) in gb.iter_mut().zip(va.data()) {
                            *o = *o + gd[0] * x;
                        }
                    });
                }
            }
            Op::AddN(items) => {
                for id in items {
                    if self.wants(*id) {
                        accumulate(&mut grads[id.0], g.shape(), |gi| {
                            for (o, &v) in gi.iter_mut().zip(gd) {
                                *o = *o + v;
                            }
                        });
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vecf(xs: &[f64]) -> Tensor<f64> {
        Tensor::vector(xs.to_vec())
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut g = Graph::<f64>::new();
        let i = g.input(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap());
        let b = g.input(Tensor::from_f64(&[2, 2], &[3.0, 4.0, 5.0, 6.0]).unwrap());
        let p = g.matmul(i, b).unwrap();
        assert_eq!(g.value(p).data(), &[3.0, 4.0, 5.0, 6.0]);

        let a = g.input(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
        let c = g.input(Tensor::from_f64(&[2, 1], &[3.0, 4.0]).unwrap());
        let p = g.matmul(a, c).unwrap();
        assert_eq!(g.value(p).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(&[2, 3]));
        let b = g.input(Tensor::zeros(&[2, 2]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2, 2]"), "{err}");
    }

    #[test]
    fn softmax_values() {
        let mut g = Graph::<f64>::new();
        let x = g.input(vecf(&[0.0, 0.0, 0.0]));
        let s = g.softmax(x).unwrap();
        for &p in g.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        // exp(k)/Σexp evaluated by hand: e=2.718281828459045, e²=7.38905609893065, e³=20.085536923187668
        let x = g.input(vecf(&[1.0, 2.0, 3.0]));
        let s = g.softmax(x).unwrap();
        let expected = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        for (p, e) in g.value(s).data().iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_of_empty_is_an_argument_error() {
        let mut g = Graph::<f64>::new();
        let m = g.input(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.softmax(m), Err(NocError::Argument(_))));
    }

    #[test]
    fn elementwise_values() {
        let mut g = Graph::<f64>::new();
        let a = g.input(vecf(&[1.0, 2.0]));
        let z = g.input(vecf(&[0.0, 0.0]));
        let s = g.elementwise(Elementwise::Add, a, Some(z)).unwrap();
        assert_eq!(g.value(s).data(), &[1.0, 2.0]);
        let zero = g.input(vecf(&[0.0]));
        let sg = g.sigmoid(zero);
        assert_eq!(g.value(sg).item(), 0.5);
        let half = g.input(vecf(&[0.5]));
        let t = g.tanh(half);
        // (e - 1)/(e + 1) with e = exp(1)
        assert!((g.value(t).item() - 0.46211715726000974).abs() < 1e-12);
        let lz = g.log(zero);
        assert_eq!(g.value(lz).item(), LOG_EPS.ln());
        let b = g.input(vecf(&[1.0, 2.0, 3.0]));
        assert!(matches!(g.add(a, b), Err(NocError::Dimension(_))));
        assert!(g.elementwise(Elementwise::Mul, a, None).is_err());
    }

    #[test]
    fn backward_linear_and_quadratic() {
        let mut g = Graph::<f64>::new();
        let x = g.param(vecf(&[1.0, 2.0, 3.0]));
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);

        let mut g = Graph::<f64>::new();
        let x = g.param(vecf(&[2.0]));
        let d = g.dot(x, x).unwrap();
        let grads = g.backward(d).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn backward_skips_constant_leaves_and_rejects_vectors() {
        let mut g = Graph::<f64>::new();
        let c = g.input(vecf(&[1.0, 2.0]));
        let p = g.param(vecf(&[3.0, 4.0]));
        let m = g.mul(c, p).unwrap();
        assert!(g.backward(m).is_err());
        let s = g.sum(m);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(grads.parameters().collect::<Vec<_>>(), vec![p]);
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let run = || {
            let mut g = Graph::<f64>::new();
            let w = g.input(Tensor::from_f64(&[2, 3], &[0.1, -0.2, 0.3, 0.7, 0.05, -1.1]).unwrap());
            let x = g.input(vecf(&[0.3, 0.9, -0.4]));
            let y = g.matvec(w, x).unwrap();
            let t = g.tanh(y);
            let s = g.softmax(t).unwrap();
            g.value(s).clone()
        };
        assert_eq!(run(), run());
    }
}
