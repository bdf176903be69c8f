//! Reverse-mode differentiation over a recorded tape.
//!
//! Every operation appends a node holding its forward value and enough
//! information to push gradients back to its inputs. Values are kept in
//! `f64` on the tape; parameters enter and leave as `f32` [`Tensor`]s.

use std::cell::{Ref, RefCell};

use super::tensor::{matrix_dims, Tensor};
use crate::error::{Error, Result};

/// Lower bound applied to the student distribution inside the KL log.
pub const KL_CLAMP: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    MatMul { a: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    GroupMean { x: Var, groups: Vec<Vec<usize>> },
    SqDist { q: Var, c: Var },
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    NllSum { logp: Var, targets: Vec<usize> },
    Kl { p: Vec<f64>, q: Var },
    Mse(Var, Var),
    PairConcat { s: Var, q: Var },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Records a computation for one backward pass.
///
/// A tape is single-threaded; run independent tapes for concurrent work.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of a scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient narrowed to `f32`, or zeros when `v` received none.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::from_f64(shape, g).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Var(nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.to_f64(), true, Op::Leaf)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.to_f64(), false, Op::Leaf)
    }

    pub fn leaf_f64(&self, shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(self.push(shape, data, requires_grad, Op::Leaf))
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].shape.clone()
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        matrix_dims(&self.nodes.borrow()[v.0].shape)
    }

    pub fn value(&self, v: Var) -> Ref<'_, [f64]> {
        Ref::map(self.nodes.borrow(), |n| n[v.0].value.as_slice())
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        Tensor::from_f64(nodes[v.0].shape.clone(), &nodes[v.0].value).expect("node shape")
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let node = &nodes[v.0];
        debug_assert_eq!(node.value.len(), 1);
        node.value[0]
    }

    fn requires(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// `x · w + b` for `x: [B, In]`, `w: [In, Out]`, `b: [Out]`.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (value, rows, cols) = {
            let nodes = self.nodes.borrow();
            let (bsz, din) = matrix_dims(&nodes[x.0].shape);
            let (win, dout) = matrix_dims(&nodes[w.0].shape);
            if din != win || nodes[b.0].value.len() != dout {
                return Err(Error::Dimension(format!(
                    "linear: x {:?}, W {:?}, b {:?}",
                    nodes[x.0].shape, nodes[w.0].shape, nodes[b.0].shape
                )));
            }
            let mut out = Vec::with_capacity(bsz * dout);
            for _ in 0..bsz {
                out.extend_from_slice(&nodes[b.0].value);
            }
            matmul_acc(&nodes[x.0].value, &nodes[w.0].value, &mut out, bsz, din, dout);
            (out, bsz, dout)
        };
        let rg = self.requires(&[x, w, b]);
        Ok(self.push(vec![rows, cols], value, rg, Op::Linear { x, w, b }))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (value, m, n) = {
            let nodes = self.nodes.borrow();
            let (m, k) = matrix_dims(&nodes[a.0].shape);
            let (k2, n) = matrix_dims(&nodes[b.0].shape);
            if k != k2 {
                return Err(Error::Dimension(format!(
                    "matmul: {:?} x {:?}",
                    nodes[a.0].shape, nodes[b.0].shape
                )));
            }
            let mut out = vec![0.0; m * n];
            matmul_acc(&nodes[a.0].value, &nodes[b.0].value, &mut out, m, k, n);
            (out, m, n)
        };
        let rg = self.requires(&[a, b]);
        Ok(self.push(vec![m, n], value, rg, Op::MatMul { a, b }))
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (shape, value, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            (n.shape.clone(), n.value.iter().map(|&v| f(v)).collect(), n.requires_grad)
        };
        self.push(shape, value, rg, op)
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn scale(&self, x: Var, s: f64) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    fn binary_same(&self, a: Var, b: Var, name: &str) -> Result<(Vec<usize>, Vec<f64>, Vec<f64>)> {
        let nodes = self.nodes.borrow();
        if nodes[a.0].value.len() != nodes[b.0].value.len() {
            return Err(Error::Dimension(format!(
                "{name}: {:?} vs {:?}",
                nodes[a.0].shape, nodes[b.0].shape
            )));
        }
        Ok((
            nodes[a.0].shape.clone(),
            nodes[a.0].value.clone(),
            nodes[b.0].value.clone(),
        ))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, av, bv) = self.binary_same(a, b, "add")?;
        let value = av.iter().zip(&bv).map(|(x, y)| x + y).collect();
        let rg = self.requires(&[a, b]);
        Ok(self.push(shape, value, rg, Op::Add(a, b)))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let (shape, av, bv) = self.binary_same(a, b, "sub")?;
        let value = av.iter().zip(&bv).map(|(x, y)| x - y).collect();
        let rg = self.requires(&[a, b]);
        Ok(self.push(shape, value, rg, Op::Sub(a, b)))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&self, x: Var) -> Var {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            (sum_f64(&nodes[x.0].value), nodes[x.0].requires_grad)
        };
        self.push(Vec::new(), vec![value], rg, Op::Sum(x))
    }

    /// Row means of `x` over each index group; output is `[groups, cols]`.
    pub fn group_mean(&self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        let (value, cols, rg) = {
            let nodes = self.nodes.borrow();
            let (rows, cols) = matrix_dims(&nodes[x.0].shape);
            let xv = &nodes[x.0].value;
            let mut out = vec![0.0; groups.len() * cols];
            for (g, members) in groups.iter().enumerate() {
                if members.is_empty() {
                    return Err(Error::Validation(format!("group {g} is empty")));
                }
                let dst = &mut out[g * cols..(g + 1) * cols];
                for &r in members {
                    if r >= rows {
                        return Err(Error::Dimension(format!("row {r} out of {rows}")));
                    }
                    for (d, s) in dst.iter_mut().zip(&xv[r * cols..(r + 1) * cols]) {
                        *d += s;
                    }
                }
                let inv = 1.0 / members.len() as f64;
                dst.iter_mut().for_each(|d| *d *= inv);
            }
            (out, cols, nodes[x.0].requires_grad)
        };
        let n = groups.len();
        Ok(self.push(vec![n, cols], value, rg, Op::GroupMean { x, groups }))
    }

    /// Squared Euclidean distances between rows of `q: [Q, E]` and `c: [N, E]`.
    pub fn sq_dist(&self, q: Var, c: Var) -> Result<Var> {
        let (value, nq, nc) = {
            let nodes = self.nodes.borrow();
            let (nq, e) = matrix_dims(&nodes[q.0].shape);
            let (nc, e2) = matrix_dims(&nodes[c.0].shape);
            if e != e2 {
                return Err(Error::Dimension(format!(
                    "sq_dist: {:?} vs {:?}",
                    nodes[q.0].shape, nodes[c.0].shape
                )));
            }
            let (qv, cv) = (&nodes[q.0].value, &nodes[c.0].value);
            let mut out = Vec::with_capacity(nq * nc);
            for i in 0..nq {
                let qi = &qv[i * e..(i + 1) * e];
                for k in 0..nc {
                    let ck = &cv[k * e..(k + 1) * e];
                    out.push(qi.iter().zip(ck).map(|(a, b)| (a - b) * (a - b)).sum());
                }
            }
            (out, nq, nc)
        };
        let rg = self.requires(&[q, c]);
        Ok(self.push(vec![nq, nc], value, rg, Op::SqDist { q, c }))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&self, x: Var) -> Var {
        let (shape, value, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            let (_, cols) = matrix_dims(&n.shape);
            let mut out = n.value.clone();
            for row in out.chunks_mut(cols.max(1)) {
                softmax_in_place(row);
            }
            (n.shape.clone(), out, n.requires_grad)
        };
        self.push(shape, value, rg, Op::SoftmaxRows(x))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self, x: Var) -> Var {
        let (shape, value, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            let (_, cols) = matrix_dims(&n.shape);
            let mut out = n.value.clone();
            for row in out.chunks_mut(cols.max(1)) {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row.iter_mut().for_each(|v| *v -= lse);
            }
            (n.shape.clone(), out, n.requires_grad)
        };
        self.push(shape, value, rg, Op::LogSoftmaxRows(x))
    }

    /// `-Σ_i logp[i, targets[i]]`.
    pub fn nll_sum(&self, logp: Var, targets: Vec<usize>) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let (rows, cols) = matrix_dims(&nodes[logp.0].shape);
            if targets.len() != rows || targets.iter().any(|&t| t >= cols) {
                return Err(Error::Dimension(format!(
                    "nll: {} targets for {rows}x{cols} log-probabilities",
                    targets.len()
                )));
            }
            let v = &nodes[logp.0].value;
            let s: f64 = targets.iter().enumerate().map(|(i, &t)| -v[i * cols + t]).sum();
            (s, nodes[logp.0].requires_grad)
        };
        Ok(self.push(Vec::new(), vec![value], rg, Op::NllSum { logp, targets }))
    }

    /// `Σ p · ln(p / max(q, 1e-12))` over all elements; `p` is a constant
    /// target distribution and zero entries of `p` contribute nothing.
    pub fn kl_divergence(&self, p: Vec<f64>, q: Var) -> Result<Var> {
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let qv = &nodes[q.0].value;
            if p.len() != qv.len() {
                return Err(Error::Dimension(format!(
                    "kl: p has {} entries, q has {}",
                    p.len(),
                    qv.len()
                )));
            }
            let s = p
                .iter()
                .zip(qv)
                .filter(|(pi, _)| **pi > 0.0)
                .map(|(pi, qi)| pi * (pi.ln() - qi.max(KL_CLAMP).ln()))
                .sum::<f64>();
            (s, nodes[q.0].requires_grad)
        };
        Ok(self.push(Vec::new(), vec![value], rg, Op::Kl { p, q }))
    }

    /// Mean of squared elementwise differences.
    pub fn mse(&self, a: Var, b: Var) -> Result<Var> {
        let (_, av, bv) = self.binary_same(a, b, "mse")?;
        let n = av.len().max(1) as f64;
        let value = av.iter().zip(&bv).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
        let rg = self.requires(&[a, b]);
        Ok(self.push(Vec::new(), vec![value], rg, Op::Mse(a, b)))
    }

    /// Every (support, query) row pair concatenated side by side.
    ///
    /// Output row `i * Q + j` is `[s_i, q_j]`, shape `[S * Q, Es + Eq]`.
    pub fn pair_concat(&self, s: Var, q: Var) -> Var {
        let (value, rows, cols, rg) = {
            let nodes = self.nodes.borrow();
            let (ns, es) = matrix_dims(&nodes[s.0].shape);
            let (nq, eq) = matrix_dims(&nodes[q.0].shape);
            let (sv, qv) = (&nodes[s.0].value, &nodes[q.0].value);
            let mut out = Vec::with_capacity(ns * nq * (es + eq));
            for i in 0..ns {
                for j in 0..nq {
                    out.extend_from_slice(&sv[i * es..(i + 1) * es]);
                    out.extend_from_slice(&qv[j * eq..(j + 1) * eq]);
                }
            }
            let rg = nodes[s.0].requires_grad || nodes[q.0].requires_grad;
            (out, ns * nq, es + eq, rg)
        };
        self.push(vec![rows, cols], value, rg, Op::PairConcat { s, q })
    }

    /// Back-propagates from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar, got shape {:?}",
                nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let mut acc = Accumulator {
                nodes: &nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf => {}
                Op::Linear { x, w, b } => {
                    let (bsz, din) = matrix_dims(&nodes[x.0].shape);
                    let dout = nodes[b.0].value.len();
                    if let Some(gb) = acc.slot(*b) {
                        for row in g.chunks(dout) {
                            for (d, s) in gb.iter_mut().zip(row) {
                                *d += s;
                            }
                        }
                    }
                    backward_matmul(&mut acc, *x, *w, &g, bsz, din, dout);
                }
                Op::MatMul { a, b } => {
                    let (m, k) = matrix_dims(&nodes[a.0].shape);
                    let (_, n) = matrix_dims(&nodes[b.0].shape);
                    backward_matmul(&mut acc, *a, *b, &g, m, k, n);
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    if let Some(gx) = acc.slot(*x) {
                        for ((d, gi), xi) in gx.iter_mut().zip(&g).zip(xv) {
                            if *xi > 0.0 {
                                *d += gi;
                            }
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    if let Some(gx) = acc.slot(*x) {
                        for ((d, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                            *d += gi * yi * (1.0 - yi);
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc.add_scaled(*a, &g, 1.0);
                    acc.add_scaled(*b, &g, 1.0);
                }
                Op::Sub(a, b) => {
                    acc.add_scaled(*a, &g, 1.0);
                    acc.add_scaled(*b, &g, -1.0);
                }
                Op::Scale(x, s) => acc.add_scaled(*x, &g, *s),
                Op::Sum(x) => {
                    if let Some(gx) = acc.slot(*x) {
                        gx.iter_mut().for_each(|d| *d += g[0]);
                    }
                }
                Op::GroupMean { x, groups } => {
                    let (_, cols) = matrix_dims(&nodes[x.0].shape);
                    if let Some(gx) = acc.slot(*x) {
                        for (gi, members) in groups.iter().enumerate() {
                            let inv = 1.0 / members.len() as f64;
                            let src = &g[gi * cols..(gi + 1) * cols];
                            for &r in members {
                                for (d, s) in gx[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                                    *d += s * inv;
                                }
                            }
                        }
                    }
                }
                Op::SqDist { q, c } => {
                    let (nq, e) = matrix_dims(&nodes[q.0].shape);
                    let (nc, _) = matrix_dims(&nodes[c.0].shape);
                    let (qv, cv) = (&nodes[q.0].value, &nodes[c.0].value);
                    if let Some(gq) = acc.slot(*q) {
                        for i in 0..nq {
                            for k in 0..nc {
                                let w = 2.0 * g[i * nc + k];
                                for t in 0..e {
                                    gq[i * e + t] += w * (qv[i * e + t] - cv[k * e + t]);
                                }
                            }
                        }
                    }
                    if let Some(gc) = acc.slot(*c) {
                        for i in 0..nq {
                            for k in 0..nc {
                                let w = 2.0 * g[i * nc + k];
                                for t in 0..e {
                                    gc[k * e + t] -= w * (qv[i * e + t] - cv[k * e + t]);
                                }
                            }
                        }
                    }
                }
                Op::SoftmaxRows(x) => {
                    let (_, cols) = matrix_dims(&node.shape);
                    let y = &node.value;
                    if let Some(gx) = acc.slot(*x) {
                        for ((gr, yr), dr) in g
                            .chunks(cols)
                            .zip(y.chunks(cols))
                            .zip(gx.chunks_mut(cols))
                        {
                            let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                                *d += yi * (gi - dot);
                            }
                        }
                    }
                }
                Op::LogSoftmaxRows(x) => {
                    let (_, cols) = matrix_dims(&node.shape);
                    let y = &node.value;
                    if let Some(gx) = acc.slot(*x) {
                        for ((gr, yr), dr) in g
                            .chunks(cols)
                            .zip(y.chunks(cols))
                            .zip(gx.chunks_mut(cols))
                        {
                            let total: f64 = gr.iter().sum();
                            for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                                *d += gi - yi.exp() * total;
                            }
                        }
                    }
                }
                Op::NllSum { logp, targets } => {
                    let (_, cols) = matrix_dims(&nodes[logp.0].shape);
                    if let Some(gl) = acc.slot(*logp) {
                        for (i, &t) in targets.iter().enumerate() {
                            gl[i * cols + t] -= g[0];
                        }
                    }
                }
                Op::Kl { p, q } => {
                    let qv = &nodes[q.0].value;
                    if let Some(gq) = acc.slot(*q) {
                        for ((d, pi), qi) in gq.iter_mut().zip(p).zip(qv) {
                            if *pi > 0.0 && *qi > KL_CLAMP {
                                *d -= g[0] * pi / qi;
                            }
                        }
                    }
                }
                Op::Mse(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let scale = 2.0 * g[0] / av.len().max(1) as f64;
                    let diff: Vec<f64> = av.iter().zip(bv).map(|(x, y)| x - y).collect();
                    acc.add_scaled(*a, &diff, scale);
                    acc.add_scaled(*b, &diff, -scale);
                }
                Op::PairConcat { s, q } => {
                    let (ns, es) = matrix_dims(&nodes[s.0].shape);
                    let (nq, eq) = matrix_dims(&nodes[q.0].shape);
                    let w = es + eq;
                    if let Some(gs) = acc.slot(*s) {
                        for i in 0..ns {
                            for j in 0..nq {
                                let row = &g[(i * nq + j) * w..];
                                for t in 0..es {
                                    gs[i * es + t] += row[t];
                                }
                            }
                        }
                    }
                    if let Some(gq) = acc.slot(*q) {
                        for i in 0..ns {
                            for j in 0..nq {
                                let row = &g[(i * nq + j) * w + es..];
                                for t in 0..eq {
                                    gq[j * eq + t] += row[t];
                                }
                            }
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }

        // only gradient-carrying nodes report a gradient
        for (g, n) in grads.iter_mut().zip(nodes.iter()) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.shape.clone()).collect(),
        })
    }
}

struct Accumulator<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl Accumulator<'_> {
    /// Gradient buffer for `v`, allocated on first use; `None` if `v` is constant.
    fn slot(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn add_scaled(&mut self, v: Var, g: &[f64], s: f64) {
        if let Some(dst) = self.slot(v) {
            for (d, gi) in dst.iter_mut().zip(g) {
                *d += s * gi;
            }
        }
    }
}

fn backward_matmul(acc: &mut Accumulator<'_>, a: Var, b: Var, g: &[f64], m: usize, k: usize, n: usize) {
    let nodes = acc.nodes;
    if let Some(ga) = acc.slot(a) {
        // dA = G · Bᵀ
        let bv = &nodes[b.0].value;
        for i in 0..m {
            let gi = &g[i * n..(i + 1) * n];
            for (t, d) in ga[i * k..(i + 1) * k].iter_mut().enumerate() {
                let bt = &bv[t * n..(t + 1) * n];
                *d += gi.iter().zip(bt).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }
    if let Some(gb) = acc.slot(b) {
        // dB = Aᵀ · G
        let av = &nodes[a.0].value;
        for i in 0..m {
            let gi = &g[i * n..(i + 1) * n];
            for t in 0..k {
                let a_it = av[i * k + t];
                if a_it == 0.0 {
                    continue;
                }
                for (d, x) in gb[t * n..(t + 1) * n].iter_mut().zip(gi) {
                    *d += a_it * x;
                }
            }
        }
    }
}

/// `out += a · b` with `a: [m, k]`, `b: [k, n]`.
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for t in 0..k {
            let a_it = a[i * k + t];
            if a_it == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[t * n..(t + 1) * n]) {
                *o += a_it * bv;
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Sum with pairwise blocking so long reductions do not drift.
fn sum_f64(values: &[f64]) -> f64 {
    if values.len() <= 1024 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        sum_f64(&values[..mid]) + sum_f64(&values[mid..])
    }
}
