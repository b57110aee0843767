//! Tape-based reverse-mode differentiation over dense `f64` vectors.
//!
//! Every operation appends a node to the tape, so node indices are already a
//! topological order. [`Graph::backward`] walks the tape once in reverse and
//! propagates adjoints only through nodes that can reach a differentiable leaf.
//!
//! ```
//! use iec_core::nn::Graph;
//!
//! let mut g = Graph::new();
//! let x = g.input(vec![3.0]);
//! let y = g.square(x);
//! g.backward(y).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[6.0]);
//! ```

use std::collections::HashMap;

use super::error::NnError;
use super::param::{ParamId, ParamStore};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Input,
    Param,
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    Scale(Var, f64),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    LogSoftmax(Var),
    Pick(Var, usize),
    Slice(Var, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Vec<f64>,
    /// `(rows, cols)`; vectors are `(len, 1)`.
    shape: (usize, usize),
    op: Op,
    differentiable: bool,
}

/// A single forward/backward computation.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<(u64, usize), Var>,
    frozen: HashMap<(u64, usize), Var>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, shape: (usize, usize), op: Op, differentiable: bool) -> Var {
        debug_assert_eq!(value.len(), shape.0 * shape.1);
        self.nodes.push(Node {
            value,
            shape,
            op,
            differentiable,
        });
        Var(self.nodes.len() - 1)
    }

    fn diff(&self, v: Var) -> bool {
        self.nodes[v.0].differentiable
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(value, (n, 1), Op::Constant, false)
    }

    /// A leaf whose gradient is tracked and can be read back with [`Graph::grad`].
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(value, (n, 1), Op::Input, true)
    }

    /// Binds a parameter tensor as a trainable leaf. Repeated binds of the same
    /// tensor return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.bind(store, id, true)
    }

    /// Binds a parameter tensor as a constant: gradients flow through it to
    /// its inputs but the tensor itself is not recorded for accumulation.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.bind(store, id, false)
    }

    fn bind(&mut self, store: &ParamStore, id: ParamId, trainable: bool) -> Var {
        let key = (store.tag(), id.index());
        let cache = if trainable { &self.params } else { &self.frozen };
        if let Some(&v) = cache.get(&key) {
            return v;
        }
        let t = store.get(id);
        let shape = match t.shape() {
            [r, c] => (*r, *c),
            [n] => (*n, 1),
            s => (s.iter().product(), 1),
        };
        if trainable {
            let v = self.push(t.values().to_vec(), shape, Op::Param, true);
            self.params.insert(key, v);
            v
        } else {
            let v = self.push(t.values().to_vec(), shape, Op::Constant, false);
            self.frozen.insert(key, v);
            v
        }
    }

    pub(crate) fn bound_params(&self, tag: u64) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.params
            .iter()
            .filter(move |((t, _), _)| *t == tag)
            .map(|((_, i), v)| (*i, *v))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].shape
    }

    /// Gradient from the most recent [`Graph::backward`], if the node was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn check_same(&self, a: Var, b: Var, op: &str) -> Result<(), NnError> {
        let (la, lb) = (self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        if la != lb {
            return Err(NnError::Dimension {
                context: op.to_string(),
                expected: la,
                found: lb,
            });
        }
        Ok(())
    }

    /// `w · x` where `w` is a `(rows, cols)` matrix node.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, NnError> {
        let (rows, cols) = self.nodes[w.0].shape;
        let xv = &self.nodes[x.0].value;
        if xv.len() != cols {
            return Err(NnError::Dimension {
                context: "matvec".into(),
                expected: cols,
                found: xv.len(),
            });
        }
        let wv = &self.nodes[w.0].value;
        let out: Vec<f64> = wv.chunks_exact(cols).map(|row| dot(row, xv)).collect();
        debug_assert_eq!(out.len(), rows);
        let d = self.diff(w) || self.diff(x);
        Ok(self.push(out, (rows, 1), Op::MatVec(w, x), d))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.check_same(a, b, "add")?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        let d = self.diff(a) || self.diff(b);
        Ok(self.push_vec(out, Op::Add(a, b), d))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.check_same(a, b, "sub")?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        let d = self.diff(a) || self.diff(b);
        Ok(self.push_vec(out, Op::Sub(a, b), d))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.check_same(a, b, "mul")?;
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        let d = self.diff(a) || self.diff(b);
        Ok(self.push_vec(out, Op::Mul(a, b), d))
    }

    /// Sum of equally sized vectors. Each coordinate is summed in ascending
    /// value order, so the result is bitwise independent of the order of `terms`.
    pub fn add_n(&mut self, terms: &[Var]) -> Result<Var, NnError> {
        let first = *terms.first().ok_or(NnError::Dimension {
            context: "add_n of zero terms".into(),
            expected: 1,
            found: 0,
        })?;
        for &t in &terms[1..] {
            self.check_same(first, t, "add_n")?;
        }
        let n = self.nodes[first.0].value.len();
        let mut column = Vec::with_capacity(terms.len());
        let out = (0..n)
            .map(|k| {
                column.clear();
                column.extend(terms.iter().map(|t| self.nodes[t.0].value[k]));
                column.sort_by(f64::total_cmp);
                column.iter().sum()
            })
            .collect();
        let d = terms.iter().any(|&t| self.diff(t));
        Ok(self.push_vec(out, Op::AddN(terms.to_vec()), d))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x * k).collect();
        let d = self.diff(a);
        self.push_vec(out, Op::Scale(a, k), d)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        let d = self.diff(a);
        self.push_vec(out, Op::Tanh(a), d)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        let d = self.diff(a);
        self.push_vec(out, Op::Exp(a), d)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.nodes[a.0].value.iter().map(|x| x * x).collect();
        let d = self.diff(a);
        self.push_vec(out, Op::Square(a), d)
    }

    /// Sum of all entries, as a length-1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.iter().sum();
        let d = self.diff(a);
        self.push_vec(vec![s], Op::Sum(a), d)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let out = log_softmax(&self.nodes[a.0].value);
        let d = self.diff(a);
        self.push_vec(out, Op::LogSoftmax(a), d)
    }

    /// Selects entry `i` as a length-1 node.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var, NnError> {
        let len = self.nodes[a.0].value.len();
        if i >= len {
            return Err(NnError::Dimension {
                context: "pick index".into(),
                expected: len,
                found: i,
            });
        }
        let x = self.nodes[a.0].value[i];
        let d = self.diff(a);
        Ok(self.push_vec(vec![x], Op::Pick(a, i), d))
    }

    /// Contiguous sub-vector `[start, start + len)`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NnError> {
        let total = self.nodes[a.0].value.len();
        if start + len > total {
            return Err(NnError::Dimension {
                context: "slice bounds".into(),
                expected: total,
                found: start + len,
            });
        }
        let out = self.nodes[a.0].value[start..start + len].to_vec();
        let d = self.diff(a);
        Ok(self.push_vec(out, Op::Slice(a, start), d))
    }

    fn push_vec(&mut self, value: Vec<f64>, op: Op, differentiable: bool) -> Var {
        let n = value.len();
        self.push(value, (n, 1), op, differentiable)
    }

    /// Populates gradients of `loss` with respect to every differentiable node.
    /// Earlier gradients are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), NnError> {
        let len = self.nodes[loss.0].value.len();
        if len != 1 {
            return Err(NnError::NonScalarLoss { len });
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[loss.0].differentiable {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &gy);
            self.grads[i] = Some(gy);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        if !self.nodes[v.0].differentiable {
            return None;
        }
        let n = self.nodes[v.0].value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&mut self, i: usize, gy: &[f64]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Constant | Op::Input | Op::Param => {}
            Op::MatVec(w, x) => {
                let cols = self.nodes[w.0].shape.1;
                if self.diff(w) {
                    let xv = std::mem::take(&mut self.nodes[x.0].value);
                    if let Some(gw) = self.acc(w) {
                        for (row, &g) in gw.chunks_exact_mut(cols).zip(gy) {
                            if g != 0.0 {
                                for (r, xi) in row.iter_mut().zip(&xv) {
                                    *r += g * xi;
                                }
                            }
                        }
                    }
                    self.nodes[x.0].value = xv;
                }
                if self.diff(x) {
                    let wv = std::mem::take(&mut self.nodes[w.0].value);
                    if let Some(gx) = self.acc(x) {
                        for (row, &g) in wv.chunks_exact(cols).zip(gy) {
                            if g != 0.0 {
                                for (o, wi) in gx.iter_mut().zip(row) {
                                    *o += g * wi;
                                }
                            }
                        }
                    }
                    self.nodes[w.0].value = wv;
                }
            }
            Op::Add(a, b) => {
                self.acc_with(a, gy, |g, _| g);
                self.acc_with(b, gy, |g, _| g);
            }
            Op::Sub(a, b) => {
                self.acc_with(a, gy, |g, _| g);
                self.acc_with(b, gy, |g, _| -g);
            }
            Op::Mul(a, b) => {
                let bv = self.nodes[b.0].value.clone();
                let av = self.nodes[a.0].value.clone();
                self.acc_with(a, gy, |g, k| g * bv[k]);
                self.acc_with(b, gy, |g, k| g * av[k]);
            }
            Op::AddN(terms) => {
                for t in terms {
                    self.acc_with(t, gy, |g, _| g);
                }
            }
            Op::Scale(a, s) => self.acc_with(a, gy, |g, _| g * s),
            Op::Tanh(a) => {
                let y = self.nodes[i].value.clone();
                self.acc_with(a, gy, |g, k| g * (1.0 - y[k] * y[k]));
            }
            Op::Exp(a) => {
                let y = self.nodes[i].value.clone();
                self.acc_with(a, gy, |g, k| g * y[k]);
            }
            Op::Square(a) => {
                let x = self.nodes[a.0].value.clone();
                self.acc_with(a, gy, |g, k| 2.0 * g * x[k]);
            }
            Op::Sum(a) => {
                let g0 = gy[0];
                if let Some(ga) = self.acc(a) {
                    ga.iter_mut().for_each(|o| *o += g0);
                }
            }
            Op::LogSoftmax(a) => {
                // d/dx_k = g_k - softmax_k * sum(g)
                let y = self.nodes[i].value.clone();
                let total: f64 = gy.iter().sum();
                self.acc_with(a, gy, |g, k| g - y[k].exp() * total);
            }
            Op::Pick(a, idx) => {
                let g0 = gy[0];
                if let Some(ga) = self.acc(a) {
                    ga[idx] += g0;
                }
            }
            Op::Slice(a, start) => {
                if let Some(ga) = self.acc(a) {
                    for (o, g) in ga[start..start + gy.len()].iter_mut().zip(gy) {
                        *o += g;
                    }
                }
            }
        }
    }

    fn acc_with(&mut self, v: Var, gy: &[f64], f: impl Fn(f64, usize) -> f64) {
        if let Some(ga) = self.acc(v) {
            for (k, (o, &g)) in ga.iter_mut().zip(gy).enumerate() {
                *o += f(g, k);
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize the loop.
    let mut acc = [0.0f64; 4];
    let (ca, ra) = (a.chunks_exact(4), a.chunks_exact(4).remainder());
    let rb = b.chunks_exact(4).remainder();
    for (x, y) in ca.zip(b.chunks_exact(4)) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub(crate) fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = g.input(vec![3.0]);
        let y = g.square(x);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient() {
        let logits = vec![0.3, -1.2, 2.0, 0.5];
        let target = 2;
        let mut g = Graph::new();
        let z = g.input(logits.clone());
        let ls = g.log_softmax(z);
        let picked = g.pick(ls, target).unwrap();
        let loss = g.scale(picked, -1.0);
        g.backward(loss).unwrap();

        let max = logits.iter().cloned().fold(f64::MIN, f64::max);
        let denom: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        for (k, gk) in g.grad(z).unwrap().iter().enumerate() {
            let p = (logits[k] - max).exp() / denom;
            let onehot = if k == target { 1.0 } else { 0.0 };
            assert!((gk - (p - onehot)).abs() < 1e-12);
        }
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let x = g.input(vec![1.0, 2.0]);
        let y = g.tanh(x);
        assert!(matches!(g.backward(y), Err(NnError::NonScalarLoss { len: 2 })));
    }

    #[test]
    fn shared_node_accumulates() {
        // f(x) = x * x + x  => f'(x) = 2x + 1
        let mut g = Graph::new();
        let x = g.input(vec![1.5]);
        let xx = g.mul(x, x).unwrap();
        let y = g.add(xx, x).unwrap();
        g.backward(y).unwrap();
        assert!((g.grad(x).unwrap()[0] - 4.0).abs() < 1e-15);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(vec![2.0]);
        let x = g.input(vec![3.0]);
        let y = g.mul(c, x).unwrap();
        g.backward(y).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn matvec_dimension_error() {
        let mut store = ParamStore::new();
        let w = store.add("w", vec![2, 3], vec![0.0; 6]);
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let x = g.input(vec![1.0, 2.0]);
        assert!(matches!(
            g.matvec(wv, x),
            Err(NnError::Dimension { expected: 3, found: 2, .. })
        ));
    }

    #[test]
    fn slice_and_pick_bounds() {
        let mut g = Graph::new();
        let x = g.input(vec![1.0, 2.0, 3.0]);
        assert!(g.slice(x, 2, 2).is_err());
        assert!(g.pick(x, 3).is_err());
        let s = g.slice(x, 1, 2).unwrap();
        assert_eq!(g.value(s), &[2.0, 3.0]);
    }
}
