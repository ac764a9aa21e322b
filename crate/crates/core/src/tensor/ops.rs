//! Forward rules of the differentiable primitives. Each records its inputs so
//! that [`Graph::backward`] can apply the matching analytic rule.

use std::sync::Arc;

use super::graph::{cross_rows, Op};
use super::{matmul_into, Graph, Neighborhoods, Tensor, Var};
use crate::error::{Error, Result};

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::shape(op, format!("{}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

impl Graph {
    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let needs = self.needs(a);
        self.push(value, op, needs)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let needs = self.needs(a) || self.needs(b);
        self.push(value, op, needs)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    fn elementwise(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor::from_vec(x.rows(), x.cols(), x.data().iter().map(|&v| f(v)).collect()).unwrap()
    }

    fn elementwise2(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.rows(), x.cols(), data).unwrap()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.1 != sb.0 {
            return Err(mismatch("matmul", sa, sb));
        }
        let mut out = Tensor::zeros(sa.0, sb.1);
        matmul_into(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            sa.0,
            sa.1,
            sb.1,
        );
        Ok(self.binary(a, b, out, Op::MatMul(a, b)))
    }

    /// Adds a `1×d` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.value(x).shape(), self.value(bias).shape());
        if sb.0 != 1 || sb.1 != sx.1 {
            return Err(mismatch("add_bias", sx, sb));
        }
        let mut out = self.value(x).clone();
        let b = self.value(bias).data().to_vec();
        for r in 0..sx.0 {
            for (o, bv) in out.row_mut(r).iter_mut().zip(&b) {
                *o += bv;
            }
        }
        Ok(self.binary(x, bias, out, Op::AddBias(x, bias)))
    }

    /// `x · w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w).map_err(|e| match e {
            Error::Shape { detail, .. } => Error::shape("linear", detail),
            other => other,
        })?;
        self.add_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.elementwise2(a, b, |x, y| x + y);
        Ok(self.binary(a, b, out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.elementwise2(a, b, |x, y| x - y);
        Ok(self.binary(a, b, out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.elementwise2(a, b, |x, y| x * y);
        Ok(self.binary(a, b, out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.elementwise(a, |x| x * s);
        self.unary(a, out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.elementwise(a, |x| x + s);
        self.unary(a, out, Op::AddScalar(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let out = self.elementwise(a, |x| if x > 0.0 { x } else { x * slope });
        self.unary(a, out, Op::LeakyRelu(a, slope))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.elementwise(a, |x| if x > 0.0 { x } else { 0.0 });
        self.unary(a, out, Op::Relu(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.elementwise(a, f64::abs);
        self.unary(a, out, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.elementwise(a, |x| x * x);
        self.unary(a, out, Op::Square(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no inputs"));
        };
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.0 != rows {
                return Err(mismatch("concat_cols", self.value(first).shape(), s));
            }
            cols += s.1;
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Column-wise maximum over rows. Ties go to the lowest row.
    pub fn row_max_pool(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(Error::shape("row_max_pool", "input has no rows"));
        }
        let mut out = x.row(0).to_vec();
        let mut argmax = vec![0; x.cols()];
        for r in 1..x.rows() {
            for (c, &v) in x.row(r).iter().enumerate() {
                if v > out[c] {
                    out[c] = v;
                    argmax[c] = r;
                }
            }
        }
        let t = Tensor::from_vec(1, out.len(), out).unwrap();
        Ok(self.unary(a, t, Op::RowMaxPool(a, argmax)))
    }

    pub fn row_avg_pool(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(Error::shape("row_avg_pool", "input has no rows"));
        }
        let mut out = super::graph::col_sums(x);
        let n = x.rows() as f64;
        for v in out.data_mut() {
            *v /= n;
        }
        Ok(self.unary(a, out, Op::RowAvgPool(a)))
    }

    /// Tiles a single row `n` times.
    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let x = self.value(a);
        if x.rows() != 1 {
            return Err(Error::shape("repeat_rows", format!("expected one row, got {}", x.rows())));
        }
        let mut out = Tensor::zeros(n, x.cols());
        for r in 0..n {
            out.row_mut(r).copy_from_slice(x.row(0));
        }
        Ok(self.unary(a, out, Op::RepeatRows(a)))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = x.clone();
        for r in 0..x.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        self.unary(a, out, Op::SoftmaxRows(a))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let x = self.value(a);
        if x.len() != rows * cols {
            return Err(mismatch("reshape", x.shape(), (rows, cols)));
        }
        let out = Tensor::from_vec(rows, cols, x.data().to_vec())?;
        Ok(self.unary(a, out, Op::Reshape(a)))
    }

    /// Output row `o` is input row `idx[o]`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::shape("gather_rows", format!("index {bad} >= {} rows", x.rows())));
        }
        let mut out = Tensor::zeros(idx.len(), x.cols());
        for (o, &i) in idx.iter().enumerate() {
            out.row_mut(o).copy_from_slice(x.row(i));
        }
        Ok(self.unary(a, out, Op::GatherRows(a, idx)))
    }

    fn check_lists(&self, op: &'static str, a: Var, lists: &Neighborhoods) -> Result<()> {
        let rows = self.value(a).rows();
        match lists.max_index() {
            Some(m) if m >= rows => Err(Error::shape(op, format!("index {m} >= {rows} rows"))),
            _ => Ok(()),
        }
    }

    /// Output row `o` is the mean of the input rows listed in `lists[o]` (zero if empty).
    pub fn gather_mean(&mut self, a: Var, lists: Arc<Neighborhoods>) -> Result<Var> {
        self.check_lists("gather_mean", a, &lists)?;
        let x = self.value(a);
        let mut out = Tensor::zeros(lists.len(), x.cols());
        for o in 0..lists.len() {
            let l = lists.get(o);
            if l.is_empty() {
                continue;
            }
            let row = out.row_mut(o);
            for &i in l {
                for (d, v) in row.iter_mut().zip(x.row(i)) {
                    *d += v;
                }
            }
            let w = l.len() as f64;
            for d in row.iter_mut() {
                *d /= w;
            }
        }
        Ok(self.unary(a, out, Op::GatherMean(a, lists)))
    }

    /// Output row `o` is the element-wise max over the input rows in `lists[o]`.
    /// Ties go to the lowest row index; empty lists produce zeros.
    pub fn gather_max(&mut self, a: Var, lists: &Neighborhoods) -> Result<Var> {
        self.check_lists("gather_max", a, lists)?;
        let x = self.value(a);
        let cols = x.cols();
        let mut out = Tensor::zeros(lists.len(), cols);
        let mut argmax = vec![usize::MAX; lists.len() * cols];
        for o in 0..lists.len() {
            for &i in lists.get(o) {
                for (c, &v) in x.row(i).iter().enumerate() {
                    let slot = o * cols + c;
                    let best = argmax[slot];
                    if best == usize::MAX
                        || v > out.data()[slot]
                        || (v == out.data()[slot] && i < best)
                    {
                        out.data_mut()[slot] = v;
                        argmax[slot] = i;
                    }
                }
            }
        }
        Ok(self.unary(a, out, Op::GatherMax(a, argmax)))
    }

    /// Mixes `heads` blocks of `values` with per-row weights:
    /// `out[e, c] = Σ_m weights[e, m] · values[e, m·d + c]`.
    pub fn head_mix(&mut self, weights: Var, values: Var, heads: usize) -> Result<Var> {
        let (sq, sv) = (self.value(weights).shape(), self.value(values).shape());
        if sq.1 != heads || sq.0 != sv.0 || heads == 0 || sv.1 % heads != 0 {
            return Err(mismatch("head_mix", sq, sv));
        }
        let d = sv.1 / heads;
        let (q, v) = (self.value(weights), self.value(values));
        let mut out = Tensor::zeros(sq.0, d);
        for e in 0..sq.0 {
            let qr = q.row(e);
            let vr = v.row(e);
            let o = out.row_mut(e);
            for m in 0..heads {
                let w = qr[m];
                for (ov, vv) in o.iter_mut().zip(&vr[m * d..(m + 1) * d]) {
                    *ov += w * vv;
                }
            }
        }
        Ok(self.binary(weights, values, out, Op::HeadMix(weights, values, heads)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.unary(a, Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.len().max(1) as f64;
        let s = x.data().iter().sum::<f64>() / n;
        self.unary(a, Tensor::scalar(s), Op::Mean(a))
    }

    /// Euclidean norm of each row, as an `n×1` column.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let data = (0..x.rows())
            .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out = Tensor::from_vec(x.rows(), 1, data).unwrap();
        self.unary(a, out, Op::RowNorm(a))
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = (0..x.rows())
            .map(|r| x.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum())
            .collect();
        let out = Tensor::from_vec(x.rows(), 1, data).unwrap();
        Ok(self.binary(a, b, out, Op::RowDot(a, b)))
    }

    /// Row-wise 3D cross product.
    pub fn cross(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cross", a, b)?;
        if self.value(a).cols() != 3 {
            return Err(Error::shape("cross", "rows must be 3-vectors"));
        }
        let out = cross_rows(self.value(a), self.value(b));
        Ok(self.binary(a, b, out, Op::Cross(a, b)))
    }

    /// Divides each row by `max(norm, eps)`.
    pub fn row_normalize(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        self.unary(a, out, Op::RowNormalize(a, eps))
    }
}
