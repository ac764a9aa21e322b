use std::collections::BTreeMap;
use std::sync::Arc;

use super::{matmul_into, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Variable-length index lists in compressed-row form.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighborhoods {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Neighborhoods {
    pub fn new<L: AsRef<[usize]>>(lists: &[L]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for l in lists {
            indices.extend_from_slice(l.as_ref());
            offsets.push(indices.len());
        }
        Neighborhoods { offsets, indices }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &[usize] {
        &self.indices[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn max_index(&self) -> Option<usize> {
        self.indices.iter().copied().max()
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Relu(Var),
    Abs(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    RowMaxPool(Var, Vec<usize>),
    RowAvgPool(Var),
    RepeatRows(Var),
    SoftmaxRows(Var),
    Reshape(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    GatherMean(Var, Arc<Neighborhoods>),
    GatherMax(Var, Vec<usize>),
    HeadMix(Var, Var, usize),
    Sum(Var),
    Mean(Var),
    RowNorm(Var),
    RowDot(Var, Var),
    Cross(Var, Var),
    RowNormalize(Var, f64),
}

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in evaluation order, so the tape is
/// a topological order by construction.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Gradients of a scalar root with respect to every node that needs one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for each registered parameter; unreachable ones are zero.
    pub fn param_grads(&self, store: &ParamStore) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, v) in &self.params {
            let g = match &self.grads[v.0] {
                Some(g) => g.clone(),
                None => {
                    let (r, c) = store.get(name).map(|t| t.shape()).unwrap_or((0, 0));
                    Tensor::zeros(r, c)
                }
            };
            out.insert(name.clone(), g);
        }
        out
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Constant input: no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Differentiable leaf that is not a stored parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Param, true)
    }

    /// Loads a named parameter from `store` as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?
            .clone();
        let v = self.push(t, Op::Param, true);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Back-propagates from a 1×1 root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let (rows, cols) = self.value(root).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarRoot { rows, cols });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));
        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            self.backprop_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let mut da = Tensor::zeros(n, k);
                    for i in 0..n {
                        let gr = g.row(i);
                        for p in 0..k {
                            let br = bv.row(p);
                            da.data[i * k + p] = gr.iter().zip(br).map(|(x, y)| x * y).sum();
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let at = av.transpose();
                    let mut db = Tensor::zeros(k, m);
                    matmul_into(&at.data, &g.data, &mut db.data, k, n, m);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.needs(*b) {
                    self.accumulate(grads, *b, col_sums(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.needs(*b) {
                    self.accumulate(grads, *b, map(g, |x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, zip(g, self.value(*b), |x, y| x * y));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, zip(g, self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, map(g, |x| x * s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(g, x, |gv, xv| if xv > 0.0 { gv } else { gv * slope }));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                self.accumulate(
                    grads,
                    *a,
                    zip(g, x, |gv, xv| {
                        if xv > 0.0 {
                            gv
                        } else if xv < 0.0 {
                            -gv
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::Square(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(g, x, |gv, xv| 2.0 * xv * gv));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if self.needs(*p) {
                        let mut part = Tensor::zeros(g.rows(), c);
                        for r in 0..g.rows() {
                            part.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        self.accumulate(grads, *p, part);
                    }
                    offset += c;
                }
            }
            Op::RowMaxPool(a, argmax) => {
                let x = self.value(*a);
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for (c, &r) in argmax.iter().enumerate() {
                    dx.data[r * x.cols() + c] += g.data[c];
                }
                self.accumulate(grads, *a, dx);
            }
            Op::RowAvgPool(a) => {
                let x = self.value(*a);
                let n = x.rows() as f64;
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for (d, gv) in dx.row_mut(r).iter_mut().zip(g.row(0)) {
                        *d = gv / n;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::RepeatRows(a) => self.accumulate(grads, *a, col_sums(g)),
            Op::SoftmaxRows(a) => {
                let mut dx = Tensor::zeros(out.rows(), out.cols());
                for r in 0..out.rows() {
                    let y = out.row(r);
                    let gr = g.row(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, yv), gv) in dx.row_mut(r).iter_mut().zip(y).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::Reshape(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::from_vec(r, c, g.data.clone()).unwrap());
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for (o, &src) in idx.iter().enumerate() {
                    for (d, gv) in dx.row_mut(src).iter_mut().zip(g.row(o)) {
                        *d += gv;
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::GatherMean(a, lists) => {
                let x = self.value(*a);
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for o in 0..lists.len() {
                    let l = lists.get(o);
                    if l.is_empty() {
                        continue;
                    }
                    let w = 1.0 / l.len() as f64;
                    for &src in l {
                        for (d, gv) in dx.row_mut(src).iter_mut().zip(g.row(o)) {
                            *d += gv * w;
                        }
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::GatherMax(a, argmax) => {
                let x = self.value(*a);
                let cols = x.cols();
                let mut dx = Tensor::zeros(x.rows(), cols);
                for (flat, &src) in argmax.iter().enumerate() {
                    if src != usize::MAX {
                        dx.data[src * cols + flat % cols] += g.data[flat];
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::HeadMix(q, v, heads) => {
                let (qv, vv) = (self.value(*q), self.value(*v));
                let d = out.cols();
                if self.needs(*q) {
                    let mut dq = Tensor::zeros(qv.rows(), *heads);
                    for e in 0..qv.rows() {
                        let gr = g.row(e);
                        let vr = vv.row(e);
                        for m in 0..*heads {
                            dq.data[e * heads + m] =
                                gr.iter().zip(&vr[m * d..(m + 1) * d]).map(|(a, b)| a * b).sum();
                        }
                    }
                    self.accumulate(grads, *q, dq);
                }
                if self.needs(*v) {
                    let mut dv = Tensor::zeros(vv.rows(), vv.cols());
                    for e in 0..vv.rows() {
                        let gr = g.row(e);
                        let qr = qv.row(e);
                        let dr = dv.row_mut(e);
                        for m in 0..*heads {
                            for (dd, gv) in dr[m * d..(m + 1) * d].iter_mut().zip(gr) {
                                *dd = qr[m] * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *v, dv);
                }
            }
            Op::Sum(a) => {
                let (r, c) = self.value(*a).shape();
                self.accumulate(grads, *a, Tensor::filled(r, c, g.data[0]));
            }
            Op::Mean(a) => {
                let (r, c) = self.value(*a).shape();
                let n = (r * c).max(1) as f64;
                self.accumulate(grads, *a, Tensor::filled(r, c, g.data[0] / n));
            }
            Op::RowNorm(a) => {
                let x = self.value(*a);
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let n = out.data[r];
                    if n > 0.0 {
                        let s = g.data[r] / n;
                        for (d, xv) in dx.row_mut(r).iter_mut().zip(x.row(r)) {
                            *d = s * xv;
                        }
                    }
                }
                self.accumulate(grads, *a, dx);
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, scale_rows(bv, &g.data));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, scale_rows(av, &g.data));
                }
            }
            Op::Cross(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    self.accumulate(grads, *a, cross_rows(bv, g));
                }
                if self.needs(*b) {
                    self.accumulate(grads, *b, cross_rows(g, av));
                }
            }
            Op::RowNormalize(a, eps) => {
                let x = self.value(*a);
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let n = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let y = out.row(r);
                    let gr = g.row(r);
                    if n > *eps {
                        let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((d, yv), gv) in dx.row_mut(r).iter_mut().zip(y).zip(gr) {
                            *d = (gv - yv * dot) / n;
                        }
                    } else {
                        for (d, gv) in dx.row_mut(r).iter_mut().zip(gr) {
                            *d = gv / eps;
                        }
                    }
                }
                self.accumulate(grads, *a, dx);
            }
        }
    }
}

pub(crate) fn col_sums(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        for (o, v) in out.data.iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    out
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        rows: t.rows,
        cols: t.cols,
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn scale_rows(t: &Tensor, s: &[f64]) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows() {
        for v in out.row_mut(r) {
            *v *= s[r];
        }
    }
    out
}

pub(crate) fn cross_rows(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), 3);
    for r in 0..a.rows() {
        let (x, y) = (a.row(r), b.row(r));
        let o = out.row_mut(r);
        o[0] = x[1] * y[2] - x[2] * y[1];
        o[1] = x[2] * y[0] - x[0] * y[2];
        o[2] = x[0] * y[1] - x[1] * y[0];
    }
    out
}
