//! Tape-based reverse-mode differentiation over batched tensors.
//!
//! A [`Graph`] records operations as they are applied and borrows parameter
//! values from a [`ParamStore`] instead of copying them. A graph lives for one
//! forward/backward pass; [`Graph::backward`] returns the parameter gradients.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::ops::{conv_output_len, focal_grad, focal_value, normalize_row, sigmoid, softmax_in_place};
use crate::nn::param::{Gradients, ParamId, ParamStore};
use crate::scalar::{gemm, MatRef, Scalar};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMulWt { x: usize, w: usize },
    AddBias { x: usize, b: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    OneMinus(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Cols { x: usize, start: usize },
    Rows { x: usize, start: usize },
    Concat(Vec<usize>),
    TimeStep { x: usize, t: usize },
    Stack(Vec<usize>),
    Conv1d { x: usize, w: usize, b: usize, cols: Vec<T>, dilation: usize, padding: usize },
    MaxTime { x: usize, argmax: Vec<usize> },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<T>, inv_std: Vec<T> },
    Mask { x: usize, mask: Vec<T> },
    Softmax(usize),
    Focal { probs: usize, targets: Vec<usize>, gamma: T, alpha: T },
    WeightedSum { x: usize, weights: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    op: Op<T>,
    value: Option<Tensor<T>>,
    requires_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, usize>,
}

fn last(shape: &[usize]) -> usize {
    *shape.last().unwrap_or(&1)
}

fn shape_err<V>(msg: String) -> Result<V> {
    Err(Error::Shape(msg))
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Graph { store, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.val(v.0)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.val(v.0).shape()
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        match (&self.nodes[i].op, &self.nodes[i].value) {
            (Op::Param(id), _) => self.store.value(*id),
            (_, Some(v)) => v,
            _ => unreachable!("non-parameter nodes always hold a value"),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, parents: &[usize]) -> Var {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        self.nodes.push(Node { op, value: Some(value), requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Input, value: Some(value), requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&i) = self.param_nodes.get(&id) {
            return Var(i);
        }
        self.nodes.push(Node { op: Op::Param(id), value: None, requires_grad: true });
        let i = self.nodes.len() - 1;
        self.param_nodes.insert(id, i);
        Var(i)
    }

    /// `x · Wᵀ` where `x` is `[..., in]` and `w` is `[out, in]`.
    pub fn matmul_wt(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if ws.len() != 2 || last(&xs) != ws[1] {
            return shape_err(format!("matmul_wt: input {xs:?} vs weight {ws:?}"));
        }
        let (inner, out) = (ws[1], ws[0]);
        let rows = self.val(x.0).len() / inner.max(1);
        let mut y = vec![T::zero(); rows * out];
        gemm(
            MatRef::new(self.val(x.0).data(), rows, inner),
            MatRef::new(self.val(w.0).data(), out, inner).t(),
            &mut y,
            false,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = out;
        let value = Tensor::from_vec(&shape, y)?;
        Ok(self.push(Op::MatMulWt { x: x.0, w: w.0 }, value, &[x.0, w.0]))
    }

    /// Adds `b` (`[n]`) to every row of `x` (`[..., n]`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = last(self.shape(x));
        if self.shape(b) != [n] {
            return shape_err(format!("add_bias: {:?} vs bias {:?}", self.shape(x), self.shape(b)));
        }
        let mut y = self.val(x.0).clone();
        let bias = self.val(b.0).data();
        for row in y.data_mut().chunks_mut(n) {
            row.iter_mut().zip(bias).for_each(|(v, &bv)| *v += bv);
        }
        Ok(self.push(Op::AddBias { x: x.0, b: b.0 }, y, &[x.0, b.0]))
    }

    /// Dense layer: `x · Wᵀ + b`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let w = self.param(w);
        let b = self.param(b);
        let y = self.matmul_wt(x, w)?;
        self.add_bias(y, b)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, what: &str) -> Result<Tensor<T>> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        let data = self.val(a.0).data().iter().zip(self.val(b.0).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(self.shape(a), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |x, y| x + y, "add")?;
        Ok(self.push(Op::Add(a.0, b.0), y, &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |x, y| x - y, "sub")?;
        Ok(self.push(Op::Sub(a.0, b.0), y, &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |x, y| x * y, "mul")?;
        Ok(self.push(Op::Mul(a.0, b.0), y, &[a.0, b.0]))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let y = self.val(a.0).map(|v| T::one() - v);
        self.push(Op::OneMinus(a.0), y, &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.val(a.0).map(sigmoid);
        self.push(Op::Sigmoid(a.0), y, &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.val(a.0).map(|v| v.tanh());
        self.push(Op::Tanh(a.0), y, &[a.0])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = self.val(a.0).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(Op::Relu(a.0), y, &[a.0])
    }

    /// Slice `[start, start + len)` of the last axis.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let width = last(&shape);
        if start + len > width {
            return shape_err(format!("cols {start}..{} of width {width}", start + len));
        }
        let mut data = Vec::with_capacity(self.val(x.0).len() / width.max(1) * len);
        for row in self.val(x.0).data().chunks(width) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = len;
        let y = Tensor::from_vec(&out_shape, data)?;
        Ok(self.push(Op::Cols { x: x.0, start }, y, &[x.0]))
    }

    /// Rows `[start, start + len)` of a rank-2 tensor.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 2 || start + len > shape[0] {
            return shape_err(format!("rows {start}..{} of {shape:?}", start + len));
        }
        let c = shape[1];
        let data = self.val(x.0).data()[start * c..(start + len) * c].to_vec();
        let y = Tensor::from_vec(&[len, c], data)?;
        Ok(self.push(Op::Rows { x: x.0, start }, y, &[x.0]))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return shape_err("concat of nothing".into());
        }
        let lead = &self.shape(parts[0])[..self.shape(parts[0]).len() - 1].to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead.as_slice() {
                return shape_err(format!("concat: leading dims {:?} vs {lead:?}", s));
            }
            total += last(s);
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                let w = last(self.shape(p));
                data.extend_from_slice(&self.val(p.0).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.clone();
        shape.push(total);
        let y = Tensor::from_vec(&shape, data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Op::Concat(ids.clone()), y, &ids))
    }

    /// Time step `t` of a `[B, T, C]` tensor, as `[B, C]`.
    pub fn time_step(&mut self, x: Var, t: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || t >= s[1] {
            return shape_err(format!("time_step {t} of {s:?}"));
        }
        let (b, steps, c) = (s[0], s[1], s[2]);
        let src = self.val(x.0).data();
        let mut data = Vec::with_capacity(b * c);
        for bi in 0..b {
            let off = (bi * steps + t) * c;
            data.extend_from_slice(&src[off..off + c]);
        }
        let y = Tensor::from_vec(&[b, c], data)?;
        Ok(self.push(Op::TimeStep { x: x.0, t }, y, &[x.0]))
    }

    /// Stacks `[B, C]` tensors into `[B, T, C]`.
    pub fn stack_time(&mut self, steps: &[Var]) -> Result<Var> {
        if steps.is_empty() {
            return shape_err("stack_time of nothing".into());
        }
        let s0 = self.shape(steps[0]).to_vec();
        if s0.len() != 2 || steps.iter().any(|&v| self.shape(v) != s0.as_slice()) {
            return shape_err("stack_time needs equal [B, C] steps".into());
        }
        let (b, c, t) = (s0[0], s0[1], steps.len());
        let mut data = vec![T::zero(); b * t * c];
        for (ti, &v) in steps.iter().enumerate() {
            let src = self.val(v.0).data();
            for bi in 0..b {
                data[(bi * t + ti) * c..(bi * t + ti + 1) * c].copy_from_slice(&src[bi * c..(bi + 1) * c]);
            }
        }
        let y = Tensor::from_vec(&[b, t, c], data)?;
        let ids: Vec<usize> = steps.iter().map(|p| p.0).collect();
        Ok(self.push(Op::Stack(ids.clone()), y, &ids))
    }

    /// Batched convolution: `x` `[B, T, Cin]`, `w` `[k, Cin, Cout]`, `b` `[Cout]`,
    /// with the semantics of [`crate::nn::ops::conv1d`] per batch element.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 3 || ws.len() != 3 || xs[2] != ws[1] || self.shape(b) != [ws[2]] {
            return shape_err(format!("conv1d: input {xs:?}, weight {ws:?}, bias {:?}", self.shape(b)));
        }
        let (batch, len, cin) = (xs[0], xs[1], xs[2]);
        let (k, cout) = (ws[0], ws[2]);
        let out_len = conv_output_len(len, k, dilation, padding)?;
        let width = k * cin;
        let src = self.val(x.0).data();
        let mut cols = vec![T::zero(); batch * out_len * width];
        for bi in 0..batch {
            for t in 0..out_len {
                let row = &mut cols[(bi * out_len + t) * width..(bi * out_len + t + 1) * width];
                for j in 0..k {
                    let s = (t + j * dilation) as isize - padding as isize;
                    if s < 0 || s as usize >= len {
                        continue;
                    }
                    let off = (bi * len + s as usize) * cin;
                    row[j * cin..(j + 1) * cin].copy_from_slice(&src[off..off + cin]);
                }
            }
        }
        let rows = batch * out_len;
        let mut y = Vec::with_capacity(rows * cout);
        for _ in 0..rows {
            y.extend_from_slice(self.val(b.0).data());
        }
        gemm(MatRef::new(&cols, rows, width), MatRef::new(self.val(w.0).data(), width, cout), &mut y, true);
        let value = Tensor::from_vec(&[batch, out_len, cout], y)?;
        Ok(self.push(Op::Conv1d { x: x.0, w: w.0, b: b.0, cols, dilation, padding }, value, &[x.0, w.0, b.0]))
    }

    /// Global max over the time axis: `[B, T, C]` → `[B, C]`.
    pub fn max_time(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || s[1] == 0 {
            return shape_err(format!("max_time of {s:?}"));
        }
        let (b, t, c) = (s[0], s[1], s[2]);
        let src = self.val(x.0).data();
        let mut out = vec![T::neg_infinity(); b * c];
        let mut argmax = vec![0usize; b * c];
        for bi in 0..b {
            for ti in 0..t {
                for ci in 0..c {
                    let v = src[(bi * t + ti) * c + ci];
                    if v > out[bi * c + ci] {
                        out[bi * c + ci] = v;
                        argmax[bi * c + ci] = ti;
                    }
                }
            }
        }
        let y = Tensor::from_vec(&[b, c], out)?;
        Ok(self.push(Op::MaxTime { x: x.0, argmax }, y, &[x.0]))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let n = last(self.shape(x));
        if n < 2 || eps <= T::zero() {
            return Err(Error::InvalidArgument("layer_norm needs n >= 2 and eps > 0".into()));
        }
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return shape_err(format!("layer_norm affine params must be [{n}]"));
        }
        let mut xhat = self.val(x.0).data().to_vec();
        let mut inv_std = Vec::with_capacity(xhat.len() / n);
        for row in xhat.chunks_mut(n) {
            inv_std.push(normalize_row(row, eps));
        }
        let (g, bt) = (self.val(gamma.0).data(), self.val(beta.0).data());
        let mut y = xhat.clone();
        for row in y.chunks_mut(n) {
            for i in 0..n {
                row[i] = row[i] * g[i] + bt[i];
            }
        }
        let value = Tensor::from_vec(self.shape(x), y)?;
        Ok(self.push(
            Op::LayerNorm { x: x.0, gamma: gamma.0, beta: beta.0, xhat, inv_std },
            value,
            &[x.0, gamma.0, beta.0],
        ))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.val(x.0).len() {
            return shape_err("mask length differs from input".into());
        }
        let data = self.val(x.0).data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let y = Tensor::from_vec(self.shape(x), data)?;
        Ok(self.push(Op::Mask { x: x.0, mask }, y, &[x.0]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let n = last(self.shape(x));
        let mut y = self.val(x.0).clone();
        for row in y.data_mut().chunks_mut(n) {
            softmax_in_place(row);
        }
        self.push(Op::Softmax(x.0), y, &[x.0])
    }

    /// Mean focal loss over the rows of `probs` (`[B, C]`).
    pub fn focal_loss(&mut self, probs: Var, targets: &[usize], gamma: T, alpha: T) -> Result<Var> {
        let s = self.shape(probs).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return shape_err(format!("focal_loss: probs {s:?} for {} targets", targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= s[1]) {
            return Err(Error::InvalidArgument(format!("target class {bad} out of range for {} classes", s[1])));
        }
        let p = self.val(probs.0);
        let total: T = targets.iter().enumerate().map(|(r, &t)| focal_value(p.row(r)[t], gamma, alpha)).sum();
        let y = Tensor::vector(vec![total / T::c(targets.len() as f64)]);
        Ok(self.push(Op::Focal { probs: probs.0, targets: targets.to_vec(), gamma, alpha }, y, &[probs.0]))
    }

    /// `Σ x_i w_i` with constant weights; handy for probing gradients.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.val(x.0).len() {
            return shape_err("weighted_sum weights length".into());
        }
        let s: T = self.val(x.0).data().iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Op::WeightedSum { x: x.0, weights }, Tensor::vector(vec![s]), &[x.0]))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.val(loss.0).len() != 1 {
            return shape_err(format!("backward needs a scalar, got {:?}", self.shape(loss)));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            if let Op::Param(_) = self.nodes[i].op {
                grads[i] = Some(dy);
                continue;
            }
            self.propagate(i, &dy, &mut grads);
        }
        let mut out: Vec<Option<Tensor<T>>> = (0..self.store.len()).map(|_| None).collect();
        for (&id, &node) in &self.param_nodes {
            if let Some(g) = grads[node].take() {
                out[id.index()] = Some(Tensor::from_vec(self.store.value(id).shape(), g)?);
            }
        }
        Ok(Gradients { grads: out })
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    fn propagate(&self, i: usize, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let y = self.val(i).data();
        match &self.nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::MatMulWt { x, w } => {
                let ws = self.val(*w).shape();
                let (out, inner) = (ws[0], ws[1]);
                let rows = dy.len() / out.max(1);
                if self.needs(*x) {
                    let g = slot(grads, *x, rows * inner);
                    gemm(MatRef::new(dy, rows, out), MatRef::new(self.val(*w).data(), out, inner), g, true);
                }
                if self.needs(*w) {
                    let g = slot(grads, *w, out * inner);
                    gemm(MatRef::new(dy, rows, out).t(), MatRef::new(self.val(*x).data(), rows, inner), g, true);
                }
            }
            Op::AddBias { x, b } => {
                if self.needs(*x) {
                    add_into(slot(grads, *x, dy.len()), dy);
                }
                if self.needs(*b) {
                    let n = self.val(*b).len();
                    let g = slot(grads, *b, n);
                    for row in dy.chunks(n) {
                        add_into(g, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for p in [*a, *b] {
                    if self.needs(p) {
                        add_into(slot(grads, p, dy.len()), dy);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    add_into(slot(grads, *a, dy.len()), dy);
                }
                if self.needs(*b) {
                    slot(grads, *b, dy.len()).iter_mut().zip(dy).for_each(|(g, &d)| *g -= d);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let other = self.val(*b).data();
                    let g = slot(grads, *a, dy.len());
                    for k in 0..dy.len() {
                        g[k] += dy[k] * other[k];
                    }
                }
                if self.needs(*b) {
                    let other = self.val(*a).data();
                    let g = slot(grads, *b, dy.len());
                    for k in 0..dy.len() {
                        g[k] += dy[k] * other[k];
                    }
                }
            }
            Op::OneMinus(a) => {
                slot(grads, *a, dy.len()).iter_mut().zip(dy).for_each(|(g, &d)| *g -= d);
            }
            Op::Sigmoid(a) => {
                let g = slot(grads, *a, dy.len());
                for k in 0..dy.len() {
                    g[k] += dy[k] * y[k] * (T::one() - y[k]);
                }
            }
            Op::Tanh(a) => {
                let g = slot(grads, *a, dy.len());
                for k in 0..dy.len() {
                    g[k] += dy[k] * (T::one() - y[k] * y[k]);
                }
            }
            Op::Relu(a) => {
                let g = slot(grads, *a, dy.len());
                for k in 0..dy.len() {
                    if y[k] > T::zero() {
                        g[k] += dy[k];
                    }
                }
            }
            Op::Cols { x, start } => {
                let width = last(self.val(*x).shape());
                let len = last(self.val(i).shape());
                let g = slot(grads, *x, self.val(*x).len());
                for (grow, drow) in g.chunks_mut(width).zip(dy.chunks(len)) {
                    add_into(&mut grow[*start..*start + len], drow);
                }
            }
            Op::Rows { x, start } => {
                let c = last(self.val(*x).shape());
                let g = slot(grads, *x, self.val(*x).len());
                add_into(&mut g[start * c..start * c + dy.len()], dy);
            }
            Op::Concat(parts) => {
                let total = last(self.val(i).shape());
                let mut offset = 0;
                for &p in parts {
                    let w = last(self.val(p).shape());
                    if self.needs(p) {
                        let g = slot(grads, p, self.val(p).len());
                        for (grow, drow) in g.chunks_mut(w).zip(dy.chunks(total)) {
                            add_into(grow, &drow[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::TimeStep { x, t } => {
                let s = self.val(*x).shape();
                let (b, steps, c) = (s[0], s[1], s[2]);
                let g = slot(grads, *x, b * steps * c);
                for bi in 0..b {
                    let off = (bi * steps + t) * c;
                    add_into(&mut g[off..off + c], &dy[bi * c..(bi + 1) * c]);
                }
            }
            Op::Stack(parts) => {
                let s = self.val(i).shape();
                let (b, steps, c) = (s[0], s[1], s[2]);
                for (ti, &p) in parts.iter().enumerate() {
                    if !self.needs(p) {
                        continue;
                    }
                    let g = slot(grads, p, b * c);
                    for bi in 0..b {
                        let off = (bi * steps + ti) * c;
                        add_into(&mut g[bi * c..(bi + 1) * c], &dy[off..off + c]);
                    }
                }
            }
            Op::Conv1d { x, w, b, cols, dilation, padding } => {
                let (dilation, padding) = (*dilation, *padding);
                let xs = self.val(*x).shape();
                let ws = self.val(*w).shape();
                let (batch, len, cin) = (xs[0], xs[1], xs[2]);
                let (k, cout) = (ws[0], ws[2]);
                let out_len = self.val(i).shape()[1];
                let width = k * cin;
                let rows = batch * out_len;
                if self.needs(*b) {
                    let g = slot(grads, *b, cout);
                    for row in dy.chunks(cout) {
                        add_into(g, row);
                    }
                }
                if self.needs(*w) {
                    let g = slot(grads, *w, width * cout);
                    gemm(MatRef::new(cols, rows, width).t(), MatRef::new(dy, rows, cout), g, true);
                }
                if self.needs(*x) {
                    let mut dcols = vec![T::zero(); rows * width];
                    gemm(
                        MatRef::new(dy, rows, cout),
                        MatRef::new(self.val(*w).data(), width, cout).t(),
                        &mut dcols,
                        false,
                    );
                    let g = slot(grads, *x, batch * len * cin);
                    for bi in 0..batch {
                        for t in 0..out_len {
                            let row = &dcols[(bi * out_len + t) * width..(bi * out_len + t + 1) * width];
                            for j in 0..k {
                                let s = (t + j * dilation) as isize - padding as isize;
                                if s < 0 || s as usize >= len {
                                    continue;
                                }
                                let off = (bi * len + s as usize) * cin;
                                add_into(&mut g[off..off + cin], &row[j * cin..(j + 1) * cin]);
                            }
                        }
                    }
                }
            }
            Op::MaxTime { x, argmax } => {
                let s = self.val(*x).shape();
                let (b, t, c) = (s[0], s[1], s[2]);
                let g = slot(grads, *x, b * t * c);
                for bi in 0..b {
                    for ci in 0..c {
                        let ti = argmax[bi * c + ci];
                        g[(bi * t + ti) * c + ci] += dy[bi * c + ci];
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let n = self.val(*gamma).len();
                let gam = self.val(*gamma).data();
                if self.needs(*gamma) {
                    let g = slot(grads, *gamma, n);
                    for (drow, xrow) in dy.chunks(n).zip(xhat.chunks(n)) {
                        for k in 0..n {
                            g[k] += drow[k] * xrow[k];
                        }
                    }
                }
                if self.needs(*beta) {
                    let g = slot(grads, *beta, n);
                    for drow in dy.chunks(n) {
                        add_into(g, drow);
                    }
                }
                if self.needs(*x) {
                    let nn = T::c(n as f64);
                    let g = slot(grads, *x, dy.len());
                    for (r, (drow, xrow)) in dy.chunks(n).zip(xhat.chunks(n)).enumerate() {
                        let mut sum_d = T::zero();
                        let mut sum_dx = T::zero();
                        for k in 0..n {
                            let d = drow[k] * gam[k];
                            sum_d += d;
                            sum_dx += d * xrow[k];
                        }
                        let scale = inv_std[r] / nn;
                        let grow = &mut g[r * n..(r + 1) * n];
                        for k in 0..n {
                            let d = drow[k] * gam[k];
                            grow[k] += scale * (nn * d - sum_d - xrow[k] * sum_dx);
                        }
                    }
                }
            }
            Op::Mask { x, mask } => {
                let g = slot(grads, *x, dy.len());
                for k in 0..dy.len() {
                    g[k] += dy[k] * mask[k];
                }
            }
            Op::Softmax(x) => {
                let n = last(self.val(i).shape());
                let g = slot(grads, *x, dy.len());
                for ((grow, drow), yrow) in g.chunks_mut(n).zip(dy.chunks(n)).zip(y.chunks(n)) {
                    let dot: T = drow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for k in 0..n {
                        grow[k] += yrow[k] * (drow[k] - dot);
                    }
                }
            }
            Op::Focal { probs, targets, gamma, alpha } => {
                let p = self.val(*probs);
                let c = p.shape()[1];
                let scale = dy[0] / T::c(targets.len() as f64);
                let g = slot(grads, *probs, p.len());
                for (r, &t) in targets.iter().enumerate() {
                    g[r * c + t] += scale * focal_grad(p.row(r)[t], *gamma, *alpha);
                }
            }
            Op::WeightedSum { x, weights } => {
                let g = slot(grads, *x, weights.len());
                for k in 0..weights.len() {
                    g[k] += dy[0] * weights[k];
                }
            }
        }
    }
}

fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], i: usize, len: usize) -> &mut [T] {
    grads[i].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}
