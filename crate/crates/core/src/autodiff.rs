//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every differentiable operation in execution order, so
//! node ids are already a topological order and the backward pass is a single
//! reverse sweep. [`Var`] is a cheap copyable handle into the tape.
//!
//! Broadcasting is limited to scalar-with-tensor arithmetic. Row and column
//! alignment goes through the explicit `add_row`, `mul_row` and `scale_rows`
//! operations.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{Error, Result};
use crate::tensor::{numel, transpose_data, ParameterStore, Tensor};

/// Output reduction for loss operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    MatMulNt(usize, usize),
    Affine(usize, usize, usize),
    Transpose(usize),
    Reshape(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Narrow { input: usize, axis: usize, start: usize },
    Embedding { table: usize, ids: Vec<usize> },
    AddRow(usize, usize),
    MulRow(usize, usize),
    ScaleRows(usize, usize),
    LayerNorm { input: usize, rstd: Vec<f64> },
    Relu(usize),
    Gelu(usize),
    Softmax { input: usize, axis: usize },
    CrossEntropy { logits: usize, targets: Vec<usize>, probs: Vec<f64>, scale: f64 },
    BceWithLogits { logits: usize, targets: Vec<f64>, scale: f64 },
    Sum(usize),
    SumAxis { input: usize, axis: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Arc<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Record of executed operations. Confined to one thread.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<BTreeMap<String, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Split of a shape around `axis`: (outer, axis length, inner).
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let inner = numel(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn matmul_data(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_acc(&mut out, a, b, k, n);
    out
}

/// Adds `a · b` into `out` for `a: [m, k]`, `b: [k, n]`.
fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], k: usize, n: usize) {
    if n == 0 || k == 0 {
        return;
    }
    let quads = k / 4 * 4;
    for (row, arow) in out.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
        for (p, bq) in (0..quads).step_by(4).zip(b.chunks_exact(4 * n)) {
            let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
            let (b0, rest) = bq.split_at(n);
            let (b1, rest) = rest.split_at(n);
            let (b2, b3) = rest.split_at(n);
            for ((((o, x0), x1), x2), x3) in row.iter_mut().zip(b0).zip(b1).zip(b2).zip(b3) {
                *o += a0 * x0 + a1 * x1 + a2 * x2 + a3 * x3;
            }
        }
        for (&av, brow) in arow[quads..].iter().zip(b[quads * n..].chunks_exact(n)) {
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for p in 0..k {
                s += arow[p] * brow[p];
            }
            out.push(s);
        }
    }
    out
}

/// `aᵀ · b` for `a: [m, k]`, `b: [m, n]`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = libm::tanh(u);
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn is_scalar(shape: &[usize]) -> bool {
    shape.is_empty()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        self.push_shared(shape, Arc::new(value), op, requires_grad)
    }

    fn push_shared(&self, shape: Vec<usize>, value: Arc<Vec<f64>>, op: Op, requires_grad: bool) -> Var<'_> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push_checked(
        &self,
        name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var<'_>> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        Ok(self.push(shape, value, op, requires_grad))
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Records a constant (never differentiated).
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    /// Records a differentiable leaf that is not part of a parameter store.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Binds a named parameter. Repeated binds of one name share a node, so
    /// gradients from every use accumulate in one place.
    pub fn param(&self, store: &ParameterStore, name: &str) -> Result<Var<'_>> {
        if let Some(&id) = self.params.borrow().get(name) {
            return Ok(Var { tape: self, id });
        }
        let t = store.get(name)?;
        let v = self.push_shared(
            t.shape().to_vec(),
            t.shared_data(),
            Op::Leaf,
            t.requires_grad(),
        );
        self.params.borrow_mut().insert(name.into(), v.id);
        Ok(v)
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.requires_grad {
                backprop(&nodes, node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward pass that accumulates parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var<'_>, store: &mut ParameterStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (name, &id) in self.params.borrow().iter() {
            if let Some(g) = grads.grads[id].as_ref() {
                if self.rg(id) {
                    store.get_mut(name)?.accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
        slot @ None => *slot = Some(delta),
    }
}

fn reduce_if_scalar(shape: &[usize], delta: Vec<f64>) -> Vec<f64> {
    if is_scalar(shape) {
        vec![delta.iter().sum()]
    } else {
        delta
    }
}

fn backprop(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            acc(grads, nodes, *a, reduce_if_scalar(&nodes[*a].shape, g.to_vec()));
            acc(grads, nodes, *b, reduce_if_scalar(&nodes[*b].shape, g.to_vec()));
        }
        Op::Sub(a, b) => {
            acc(grads, nodes, *a, reduce_if_scalar(&nodes[*a].shape, g.to_vec()));
            let neg = g.iter().map(|v| -v).collect();
            acc(grads, nodes, *b, reduce_if_scalar(&nodes[*b].shape, neg));
        }
        Op::Mul(a, b) => {
            let (av, bv) = (nodes[*a].value.as_slice(), nodes[*b].value.as_slice());
            let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
            let ga = (0..g.len()).map(|i| g[i] * pick(bv, i)).collect();
            let gb = (0..g.len()).map(|i| g[i] * pick(av, i)).collect();
            acc(grads, nodes, *a, reduce_if_scalar(&nodes[*a].shape, ga));
            acc(grads, nodes, *b, reduce_if_scalar(&nodes[*b].shape, gb));
        }
        Op::Scale(a, c) => acc(grads, nodes, *a, g.iter().map(|v| v * c).collect()),
        Op::MatMul(a, b) => {
            let (an, bn) = (&nodes[*a], &nodes[*b]);
            let (m, k, n) = (an.shape[0], an.shape[1], bn.shape[1]);
            if an.requires_grad {
                acc(grads, nodes, *a, matmul_nt(g, &bn.value, m, n, k));
            }
            if bn.requires_grad {
                acc(grads, nodes, *b, matmul_tn(&an.value, g, m, k, n));
            }
        }
        Op::MatMulNt(a, b) => {
            let (an, bn) = (&nodes[*a], &nodes[*b]);
            let (m, k, n) = (an.shape[0], an.shape[1], bn.shape[0]);
            if an.requires_grad {
                acc(grads, nodes, *a, matmul_data(g, &bn.value, m, n, k));
            }
            if bn.requires_grad {
                acc(grads, nodes, *b, matmul_tn(g, &an.value, m, n, k));
            }
        }
        Op::Affine(x, w, b) => {
            let (xn, wn) = (&nodes[*x], &nodes[*w]);
            let (m, k, n) = (xn.shape[0], xn.shape[1], wn.shape[1]);
            if xn.requires_grad {
                acc(grads, nodes, *x, matmul_nt(g, &wn.value, m, n, k));
            }
            if wn.requires_grad {
                acc(grads, nodes, *w, matmul_tn(&xn.value, g, m, k, n));
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; n];
                for row in g.chunks_exact(n) {
                    gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                }
                acc(grads, nodes, *b, gb);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (node.shape[0], node.shape[1]);
            acc(grads, nodes, *a, transpose_data(g, r, c));
        }
        Op::Reshape(a) => acc(grads, nodes, *a, g.to_vec()),
        Op::Concat { inputs, axis } => {
            let (outer, _, inner) = axis_split(&node.shape, *axis);
            let total = node.shape[*axis];
            let mut offset = 0;
            for &inp in inputs {
                let len = nodes[inp].shape[*axis];
                let mut d = Vec::with_capacity(outer * len * inner);
                for o in 0..outer {
                    let base = (o * total + offset) * inner;
                    d.extend_from_slice(&g[base..base + len * inner]);
                }
                acc(grads, nodes, inp, d);
                offset += len;
            }
        }
        Op::Narrow { input, axis, start } => {
            let in_shape = &nodes[*input].shape;
            let (outer, total, inner) = axis_split(in_shape, *axis);
            let len = node.shape[*axis];
            let mut d = vec![0.0; numel(in_shape)];
            for o in 0..outer {
                let src = o * len * inner;
                let dst = (o * total + start) * inner;
                d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            acc(grads, nodes, *input, d);
        }
        Op::Embedding { table, ids } => {
            let tshape = &nodes[*table].shape;
            let dim = tshape[1];
            let mut d = vec![0.0; numel(tshape)];
            for (row, &id) in ids.iter().enumerate() {
                for j in 0..dim {
                    d[id * dim + j] += g[row * dim + j];
                }
            }
            acc(grads, nodes, *table, d);
        }
        Op::AddRow(x, b) => {
            let d = nodes[*b].value.len();
            let mut gb = vec![0.0; d];
            for row in g.chunks(d) {
                gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            }
            acc(grads, nodes, *x, g.to_vec());
            acc(grads, nodes, *b, gb);
        }
        Op::MulRow(x, s) => {
            let sv = nodes[*s].value.as_slice();
            let xv = nodes[*x].value.as_slice();
            let d = sv.len();
            let mut gs = vec![0.0; d];
            let mut gx = vec![0.0; g.len()];
            for i in 0..g.len() {
                gx[i] = g[i] * sv[i % d];
                gs[i % d] += g[i] * xv[i];
            }
            acc(grads, nodes, *x, gx);
            acc(grads, nodes, *s, gs);
        }
        Op::ScaleRows(x, w) => {
            let wv = nodes[*w].value.as_slice();
            let xv = nodes[*x].value.as_slice();
            let d = node.shape[1];
            let mut gw = vec![0.0; wv.len()];
            let mut gx = vec![0.0; g.len()];
            for i in 0..g.len() {
                gx[i] = g[i] * wv[i / d];
                gw[i / d] += g[i] * xv[i];
            }
            acc(grads, nodes, *x, gx);
            acc(grads, nodes, *w, gw);
        }
        Op::LayerNorm { input, rstd } => {
            let d = node.shape[1];
            let y = node.value.as_slice();
            let mut gx = vec![0.0; g.len()];
            for (r, &rs) in rstd.iter().enumerate() {
                let gr = &g[r * d..(r + 1) * d];
                let yr = &y[r * d..(r + 1) * d];
                let mean_g = gr.iter().sum::<f64>() / d as f64;
                let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                for j in 0..d {
                    gx[r * d + j] = rs * (gr[j] - mean_g - yr[j] * mean_gy);
                }
            }
            acc(grads, nodes, *input, gx);
        }
        Op::Relu(a) => {
            let xv = nodes[*a].value.as_slice();
            let d = g.iter().zip(xv).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
            acc(grads, nodes, *a, d);
        }
        Op::Gelu(a) => {
            let xv = nodes[*a].value.as_slice();
            let d = g.iter().zip(xv).map(|(g, x)| g * gelu_grad(*x)).collect();
            acc(grads, nodes, *a, d);
        }
        Op::Softmax { input, axis } => {
            let (outer, len, inner) = axis_split(&node.shape, *axis);
            let y = node.value.as_slice();
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                    for k in 0..len {
                        gx[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                    }
                }
            }
            acc(grads, nodes, *input, gx);
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
            scale,
        } => {
            let v = nodes[*logits].shape[1];
            let s = g[0] * scale;
            let mut d: Vec<f64> = probs.iter().map(|p| p * s).collect();
            for (r, &t) in targets.iter().enumerate() {
                d[r * v + t] -= s;
            }
            acc(grads, nodes, *logits, d);
        }
        Op::BceWithLogits {
            logits,
            targets,
            scale,
        } => {
            let xv = nodes[*logits].value.as_slice();
            let s = g[0] * scale;
            let d = xv
                .iter()
                .zip(targets)
                .map(|(x, t)| (sigmoid(*x) - t) * s)
                .collect();
            acc(grads, nodes, *logits, d);
        }
        Op::Sum(a) => {
            let n = nodes[*a].value.len();
            acc(grads, nodes, *a, vec![g[0]; n]);
        }
        Op::SumAxis { input, axis } => {
            let in_shape = &nodes[*input].shape;
            let (outer, len, inner) = axis_split(in_shape, *axis);
            let mut d = vec![0.0; numel(in_shape)];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        d[(o * len + k) * inner + i] = g[o * inner + i];
                    }
                }
            }
            acc(grads, nodes, *input, d);
        }
    }
}

/// Logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Numerically stable softmax over a slice.
pub fn softmax_slice(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| libm::exp(x - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn data(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.to_vec()
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.to_vec()).expect("node shape is consistent")
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.tape.nodes.borrow()[self.id].value[0]
    }

    fn with<R>(&self, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id])
    }

    fn elementwise(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape == b.shape {
                let v = a.value.iter().zip(b.value.iter()).map(|(x, y)| f(*x, *y)).collect();
                (a.shape.clone(), v)
            } else if is_scalar(&b.shape) {
                let y = b.value[0];
                (a.shape.clone(), a.value.iter().map(|x| f(*x, y)).collect())
            } else if is_scalar(&a.shape) {
                let x = a.value[0];
                (b.shape.clone(), b.value.iter().map(|y| f(x, *y)).collect())
            } else {
                return Err(Error::shape(name, &a.shape, &b.shape));
            }
        };
        let rg = self.tape.rg(self.id) || self.tape.rg(other.id);
        self.tape.push_checked(name, shape, value, op, rg)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        let (shape, value) = self.with(|n| (n.shape.clone(), n.value.iter().map(|v| v * c).collect()));
        let rg = self.tape.rg(self.id);
        self.tape
            .push_checked("scale", shape, value, Op::Scale(self.id, c), rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                return Err(Error::shape("matmul", &a.shape, &b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
            (vec![m, n], matmul_data(&a.value, &b.value, m, k, n))
        };
        let rg = self.tape.rg(self.id) || self.tape.rg(other.id);
        self.tape
            .push_checked("matmul", shape, value, Op::MatMul(self.id, other.id), rg)
    }

    /// `self · w + b` with `b` added to every row.
    pub fn affine(self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (x, wn, bn) = (&nodes[self.id], &nodes[w.id], &nodes[b.id]);
            if x.shape.len() != 2 || wn.shape.len() != 2 || x.shape[1] != wn.shape[0] {
                return Err(Error::shape("affine", &x.shape, &wn.shape));
            }
            let (m, k, n) = (x.shape[0], x.shape[1], wn.shape[1]);
            if bn.shape != [n] {
                return Err(Error::shape("affine bias", &[n], &bn.shape));
            }
            let mut out = Vec::with_capacity(m * n);
            for _ in 0..m {
                out.extend_from_slice(&bn.value);
            }
            matmul_acc(&mut out, &x.value, &wn.value, k, n);
            (vec![m, n], out)
        };
        let rg = self.tape.rg(self.id) || self.tape.rg(w.id) || self.tape.rg(b.id);
        self.tape
            .push_checked("affine", shape, value, Op::Affine(self.id, w.id, b.id), rg)
    }

    /// `self · otherᵀ` for `[m, k]` and `[n, k]`.
    pub fn matmul_t(self, other: Var<'t>) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[1] {
                return Err(Error::shape("matmul_t", &a.shape, &b.shape));
            }
            let (m, k, n) = (a.shape[0], a.shape[1], b.shape[0]);
            (vec![m, n], matmul_nt(&a.value, &b.value, m, k, n))
        };
        let rg = self.tape.rg(self.id) || self.tape.rg(other.id);
        self.tape
            .push_checked("matmul_t", shape, value, Op::MatMulNt(self.id, other.id), rg)
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.shape.len() != 2 {
                return Err(Error::shape("transpose", &a.shape, &[2]));
            }
            let (r, c) = (a.shape[0], a.shape[1]);
            (vec![c, r], transpose_data(&a.value, r, c))
        };
        let rg = self.tape.rg(self.id);
        Ok(self.tape.push(shape, value, Op::Transpose(self.id), rg))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.with(|n| {
            if numel(shape) != n.value.len() {
                Err(Error::shape("reshape", &n.shape, shape))
            } else {
                Ok(n.value.clone())
            }
        })?;
        let rg = self.tape.rg(self.id);
        Ok(self.tape.push_shared(shape.to_vec(), value, Op::Reshape(self.id), rg))
    }

    /// Concatenates tensors of equal rank along `axis`.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::input("concat of zero tensors"))?;
        let tape = first.tape;
        let (shape, value) = {
            let nodes = tape.nodes.borrow();
            let base = &nodes[first.id].shape;
            if axis >= base.len() {
                return Err(Error::Axis {
                    axis,
                    rank: base.len(),
                });
            }
            let mut total = 0;
            for p in parts {
                let s = &nodes[p.id].shape;
                let compatible = s.len() == base.len()
                    && s.iter()
                        .zip(base)
                        .enumerate()
                        .all(|(i, (x, y))| i == axis || x == y);
                if !compatible {
                    return Err(Error::shape("concat", base, s));
                }
                total += s[axis];
            }
            let mut shape = base.clone();
            shape[axis] = total;
            let (outer, _, inner) = axis_split(&shape, axis);
            let mut value = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for p in parts {
                    let n = &nodes[p.id];
                    let chunk = n.shape[axis] * inner;
                    value.extend_from_slice(&n.value[o * chunk..(o + 1) * chunk]);
                }
            }
            (shape, value)
        };
        let rg = parts.iter().any(|p| tape.rg(p.id));
        let op = Op::Concat {
            inputs: parts.iter().map(|p| p.id).collect(),
            axis,
        };
        Ok(tape.push(shape, value, op, rg))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if axis >= a.shape.len() {
                return Err(Error::Axis {
                    axis,
                    rank: a.shape.len(),
                });
            }
            if start + len > a.shape[axis] {
                let mut want = a.shape.clone();
                want[axis] = start + len;
                return Err(Error::shape("narrow", &a.shape, &want));
            }
            let (outer, total, inner) = axis_split(&a.shape, axis);
            let mut value = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * total + start) * inner;
                value.extend_from_slice(&a.value[base..base + len * inner]);
            }
            let mut shape = a.shape.clone();
            shape[axis] = len;
            (shape, value)
        };
        let rg = self.tape.rg(self.id);
        let op = Op::Narrow {
            input: self.id,
            axis,
            start,
        };
        Ok(self.tape.push(shape, value, op, rg))
    }

    /// Gathers rows of an embedding table `[vocab, dim]`.
    pub fn embedding(self, ids: &[u32]) -> Result<Var<'t>> {
        let (shape, value, idx) = {
            let nodes = self.tape.nodes.borrow();
            let t = &nodes[self.id];
            if t.shape.len() != 2 {
                return Err(Error::shape("embedding", &t.shape, &[2]));
            }
            let (size, dim) = (t.shape[0], t.shape[1]);
            let mut value = Vec::with_capacity(ids.len() * dim);
            let mut idx = Vec::with_capacity(ids.len());
            for &id in ids {
                let i = id as usize;
                if i >= size {
                    return Err(Error::TokenOutOfRange { id, size });
                }
                value.extend_from_slice(&t.value[i * dim..(i + 1) * dim]);
                idx.push(i);
            }
            (vec![ids.len(), dim], value, idx)
        };
        let rg = self.tape.rg(self.id);
        let op = Op::Embedding {
            table: self.id,
            ids: idx,
        };
        Ok(self.tape.push(shape, value, op, rg))
    }

    fn row_op(
        self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (x, r) = (&nodes[self.id], &nodes[other.id]);
            if x.shape.len() != 2 || r.shape.len() != 1 || r.shape[0] != x.shape[1] {
                return Err(Error::shape(name, &x.shape, &r.shape));
            }
            let d = r.shape[0];
            let mut v = Vec::with_capacity(x.value.len());
            if d > 0 {
                for row in x.value.chunks_exact(d) {
                    v.extend(row.iter().zip(r.value.iter()).map(|(a, b)| f(*a, *b)));
                }
            }
            (x.shape.clone(), v)
        };
        let rg = self.tape.rg(self.id) || self.tape.rg(other.id);
        self.tape.push_checked(name, shape, value, op, rg)
    }

    /// `[n, d] + [d]`, adding the vector to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.row_op(bias, "add_row", Op::AddRow(self.id, bias.id), |a, b| a + b)
    }

    /// `[n, d] * [d]`, scaling every row elementwise.
    pub fn mul_row(self, gain: Var<'t>) -> Result<Var<'t>> {
        self.row_op(gain, "mul_row", Op::MulRow(self.id, gain.id), |a, b| a * b)
    }

    /// `[n, d] * [n, 1]`, scaling row `i` by `w[i]`.
    pub fn scale_rows(self, weights: Var<'t>) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let (x, w) = (&nodes[self.id], &nodes[weights.id]);
            if x.shape.len() != 2 || w.shape != [x.shape[0], 1] {
                return Err(Error::shape("scale_rows", &x.shape, &w.shape));
            }
            let d = x.shape[1];
            let v = x
                .value
                .iter()
                .enumerate()
                .map(|(i, xv)| xv * w.value[i / d])
                .collect();
            (x.shape.clone(), v)
        };
        let rg = self.tape.rg(self.id) || self.tape.rg(weights.id);
        let op = Op::ScaleRows(self.id, weights.id);
        self.tape.push_checked("scale_rows", shape, value, op, rg)
    }

    /// Row-wise normalization of a matrix to zero mean and unit variance.
    /// The affine part is applied separately with `mul_row` / `add_row`.
    pub fn layer_norm(self, eps: f64) -> Result<Var<'t>> {
        let (shape, value, rstd) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if x.shape.len() != 2 {
                return Err(Error::shape("layer_norm", &x.shape, &[2]));
            }
            let d = x.shape[1];
            if d == 0 {
                return Err(Error::EmptyAxis {
                    op: "layer_norm",
                    axis: 1,
                });
            }
            let mut value = Vec::with_capacity(x.value.len());
            let mut rstd = Vec::with_capacity(x.shape[0]);
            for row in x.value.chunks(d) {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let rs = 1.0 / libm::sqrt(var + eps);
                value.extend(row.iter().map(|v| (v - mean) * rs));
                rstd.push(rs);
            }
            (x.shape.clone(), value, rstd)
        };
        let rg = self.tape.rg(self.id);
        let op = Op::LayerNorm {
            input: self.id,
            rstd,
        };
        self.tape.push_checked("layer_norm", shape, value, op, rg)
    }

    pub fn relu(self) -> Var<'t> {
        let (shape, value) = self.with(|n| {
            (
                n.shape.clone(),
                n.value.iter().map(|v| v.max(0.0)).collect(),
            )
        });
        let rg = self.tape.rg(self.id);
        self.tape.push(shape, value, Op::Relu(self.id), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t> {
        let (shape, value) =
            self.with(|n| (n.shape.clone(), n.value.iter().map(|v| gelu(*v)).collect()));
        let rg = self.tape.rg(self.id);
        self.tape.push(shape, value, Op::Gelu(self.id), rg)
    }

    /// Softmax along `axis`, with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if axis >= x.shape.len() {
                return Err(Error::Axis {
                    axis,
                    rank: x.shape.len(),
                });
            }
            let (outer, len, inner) = axis_split(&x.shape, axis);
            if len == 0 {
                return Err(Error::EmptyAxis { op: "softmax", axis });
            }
            let mut value = vec![0.0; x.value.len()];
            let mut buf = vec![0.0; len];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |k: usize| (o * len + k) * inner + i;
                    for (k, b) in buf.iter_mut().enumerate() {
                        *b = x.value[idx(k)];
                    }
                    for (k, p) in softmax_slice(&buf).into_iter().enumerate() {
                        value[idx(k)] = p;
                    }
                }
            }
            (x.shape.clone(), value)
        };
        let rg = self.tape.rg(self.id);
        let op = Op::Softmax {
            input: self.id,
            axis,
        };
        self.tape.push_checked("softmax", shape, value, op, rg)
    }

    /// Cross-entropy of row-wise logits `[n, vocab]` against target ids.
    pub fn cross_entropy(self, targets: &[u32], reduction: Reduction) -> Result<Var<'t>> {
        let (value, probs, idx, scale) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if x.shape.len() != 2 || x.shape[0] != targets.len() {
                return Err(Error::shape("cross_entropy", &x.shape, &[targets.len()]));
            }
            let v = x.shape[1];
            if v == 0 {
                return Err(Error::EmptyAxis {
                    op: "cross_entropy",
                    axis: 1,
                });
            }
            let mut probs = Vec::with_capacity(x.value.len());
            let mut loss = 0.0;
            let mut idx = Vec::with_capacity(targets.len());
            for (row, &t) in x.value.chunks(v).zip(targets) {
                let t = t as usize;
                if t >= v {
                    return Err(Error::TokenOutOfRange {
                        id: t as u32,
                        size: v,
                    });
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + libm::log(row.iter().map(|r| libm::exp(r - max)).sum::<f64>());
                loss += lse - row[t];
                probs.extend(row.iter().map(|r| libm::exp(r - lse)));
                idx.push(t);
            }
            let scale = match reduction {
                Reduction::Sum => 1.0,
                Reduction::Mean if targets.is_empty() => 0.0,
                Reduction::Mean => 1.0 / targets.len() as f64,
            };
            (loss * scale, probs, idx, scale)
        };
        let rg = self.tape.rg(self.id);
        let op = Op::CrossEntropy {
            logits: self.id,
            targets: idx,
            probs,
            scale,
        };
        self.tape
            .push_checked("cross_entropy", Vec::new(), vec![value], op, rg)
    }

    /// Binary cross-entropy on logits against targets in `[0, 1]`.
    pub fn bce_with_logits(self, targets: &[f64], reduction: Reduction) -> Result<Var<'t>> {
        let (value, scale) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if x.value.len() != targets.len() {
                return Err(Error::shape("bce_with_logits", &x.shape, &[targets.len()]));
            }
            let loss: f64 = x
                .value
                .iter()
                .zip(targets)
                .map(|(x, t)| x.max(0.0) - x * t + libm::log1p(libm::exp(-x.abs())))
                .sum();
            let scale = match reduction {
                Reduction::Sum => 1.0,
                Reduction::Mean if targets.is_empty() => 0.0,
                Reduction::Mean => 1.0 / targets.len() as f64,
            };
            (loss * scale, scale)
        };
        let rg = self.tape.rg(self.id);
        let op = Op::BceWithLogits {
            logits: self.id,
            targets: targets.to_vec(),
            scale,
        };
        self.tape
            .push_checked("bce_with_logits", Vec::new(), vec![value], op, rg)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Var<'t> {
        let total = self.with(|n| n.value.iter().sum::<f64>());
        let rg = self.tape.rg(self.id);
        self.tape.push(Vec::new(), vec![total], Op::Sum(self.id), rg)
    }

    /// Mean of all elements, as a scalar. Zero for an empty tensor.
    pub fn mean(self) -> Result<Var<'t>> {
        let n = self.with(|n| n.value.len());
        let s = self.sum();
        if n == 0 {
            return Ok(s);
        }
        s.scale(1.0 / n as f64)
    }

    /// Sums out `axis`, dropping it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let (shape, value) = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id];
            if axis >= x.shape.len() {
                return Err(Error::Axis {
                    axis,
                    rank: x.shape.len(),
                });
            }
            let (outer, len, inner) = axis_split(&x.shape, axis);
            let mut value = vec![0.0; outer * inner];
            for o in 0..outer {
                for k in 0..len {
                    for i in 0..inner {
                        value[o * inner + i] += x.value[(o * len + k) * inner + i];
                    }
                }
            }
            let mut shape = x.shape.clone();
            shape.remove(axis);
            (shape, value)
        };
        let rg = self.tape.rg(self.id);
        let op = Op::SumAxis {
            input: self.id,
            axis,
        };
        Ok(self.tape.push(shape, value, op, rg))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let tape = Tape::new();
        let id = tape.constant(&t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let v = tape.constant(&t(&[2, 1], &[3.0, 4.0]));
        assert_eq!(id.matmul(v).unwrap().data(), vec![3.0, 4.0]);

        let row = tape.constant(&t(&[1, 2], &[1.0, 2.0]));
        let out = row.matmul(v).unwrap();
        assert_eq!(out.shape(), vec![1, 1]);
        assert_eq!(out.data(), vec![11.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(&Tensor::zeros(&[2, 3]));
        let b = tape.constant(&Tensor::zeros(&[4, 1]));
        let err = a.matmul(b).unwrap_err();
        assert_eq!(err, Error::shape("matmul", &[2, 3], &[4, 1]));
        let msg = alloc::format!("{err}");
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 1]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::new();
        let p = tape.constant(&Tensor::vector(vec![0.0; 3])).softmax(0).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = Tensor::vector(vec![libm::log(1.0), libm::log(2.0), libm::log(3.0)]);
        let p = tape.constant(&x).softmax(0).unwrap().data();
        for (got, want) in p.iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let p = tape
            .constant(&Tensor::vector(vec![1000.0, 0.0]))
            .softmax(0)
            .unwrap()
            .data();
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] < 1e-300 && p[1] >= 0.0);
    }

    #[test]
    fn softmax_errors() {
        let tape = Tape::new();
        let x = tape.constant(&Tensor::zeros(&[2, 0]));
        assert!(matches!(x.softmax(1), Err(Error::EmptyAxis { .. })));
        assert!(matches!(x.softmax(2), Err(Error::Axis { .. })));
    }

    #[test]
    fn softmax_along_rows_and_columns() {
        let tape = Tape::new();
        let x = tape.constant(&t(&[2, 2], &[0.0, 0.0, 1.0, 1.0]));
        let by_col = x.softmax(0).unwrap().data();
        let e = libm::exp(1.0);
        assert!((by_col[0] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert_eq!(x.softmax(1).unwrap().data(), vec![0.5; 4]);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, -2.0, 3.0]));
        let loss = x.sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_dot() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let loss = x.mul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn scalar_broadcast_only() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        let s = tape.leaf(&Tensor::scalar(3.0));
        let y = x.mul(s).unwrap();
        assert_eq!(y.data(), vec![3.0, 6.0]);
        let g = tape.backward(y.sum()).unwrap();
        assert_eq!(g.get(s).unwrap(), &[3.0]);
        let z = tape.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(x.add(z).is_err());
    }

    #[test]
    fn param_binds_once_and_accumulates() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::vector(vec![2.0]));
        let tape = Tape::new();
        let a = tape.param(&store, "w").unwrap();
        let b = tape.param(&store, "w").unwrap();
        let loss = a.add(b).unwrap().sum();
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad().unwrap(), &[2.0]);
    }

    #[test]
    fn embedding_rejects_out_of_range() {
        let tape = Tape::new();
        let table = tape.leaf(&Tensor::zeros(&[3, 2]));
        assert!(matches!(
            table.embedding(&[0, 3]),
            Err(Error::TokenOutOfRange { id: 3, size: 3 })
        ));
    }

    #[test]
    fn concat_and_narrow_invert() {
        let tape = Tape::new();
        let a = tape.leaf(&t(&[2, 1], &[1.0, 2.0]));
        let b = tape.leaf(&t(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = Var::concat(&[a, b], 1).unwrap();
        assert_eq!(c.data(), vec![1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        assert_eq!(c.narrow(1, 1, 2).unwrap().data(), b.data());
        assert_eq!(c.narrow(1, 0, 1).unwrap().data(), a.data());
    }

    #[test]
    fn cross_entropy_of_uniform_logits() {
        let tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[2, 4]));
        let loss = x.cross_entropy(&[0, 3], Reduction::Mean).unwrap();
        assert!((loss.item() - libm::log(4.0)).abs() < 1e-15);
    }

    #[test]
    fn affine_matches_matmul_plus_row() {
        let xs: Vec<f64> = (0..10).map(|i| 0.3 * i as f64 - 1.0).collect();
        let ws: Vec<f64> = (0..15).map(|i| 0.1 * (i as f64 - 7.0)).collect();
        let run = |fused: bool| {
            let tape = Tape::new();
            let x = tape.leaf(&t(&[2, 5], &xs));
            let w = tape.leaf(&t(&[5, 3], &ws));
            let b = tape.leaf(&t(&[3], &[0.5, -1.0, 2.0]));
            let y = if fused {
                x.affine(w, b).unwrap()
            } else {
                x.matmul(w).unwrap().add_row(b).unwrap()
            };
            let loss = y.mul(y).unwrap().sum();
            let g = tape.backward(loss).unwrap();
            let grads: Vec<Vec<f64>> = [x, w, b].iter().map(|v| g.get(*v).unwrap().to_vec()).collect();
            (y.data(), grads)
        };
        let (fy, fg) = run(true);
        let (py, pg) = run(false);
        for (a, b) in fy.iter().zip(&py) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in fg.iter().flatten().zip(pg.iter().flatten()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
