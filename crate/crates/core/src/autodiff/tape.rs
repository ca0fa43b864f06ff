use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Concat(Vec<Var>),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    Sum(Var),
    Mean(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Pow(Var, f64),
    Clamp(Var, f64, f64),
    SegmentSum(Var, Rc<Vec<usize>>),
    Gather(Var, Rc<Vec<usize>>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records operations in execution order so [`Tape::backward`] can replay
/// them in reverse. One tape per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` for values that do not depend on any
/// gradient-requiring leaf.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.0.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => {
                self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad
            }
            Op::Concat(vs) => vs.iter().any(|v| self.nodes[v.0].needs_grad),
            Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Log(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Pow(a, _)
            | Op::Clamp(a, _, _)
            | Op::SegmentSum(a, _)
            | Op::Gather(a, _) => self.nodes[a.0].needs_grad,
        };
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.val(a), self.val(b));
        if x.cols() != y.rows() {
            return Err(mismatch("matmul", x, y));
        }
        let out = gemm(x, false, y, false);
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.val(a), self.val(b));
        if x.shape() != y.shape() {
            return Err(mismatch(op, x, y));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.val(a).zip(self.val(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.val(a).zip(self.val(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.val(a).zip(self.val(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), "mul")
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.val(a), self.val(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(mismatch("add_row", x, r));
        }
        let mut out = x.clone();
        let c = x.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += r.data()[i % c];
        }
        self.push(out, Op::AddRow(a, row), "add_row")
    }

    /// Concatenates along columns; all inputs need the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.val(parts[0]);
        let rows = first.rows();
        for p in &parts[1..] {
            if self.val(*p).rows() != rows {
                return Err(mismatch("concat", first, self.val(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.val(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.val(*p).row(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        self.push(out, Op::Concat(parts.to_vec()), "concat")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.val(a).map(f64::ln);
        self.push(out, Op::Log(a), "log")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(a).data().iter().sum());
        self.push(out, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.val(a);
        let n = x.len().max(1) as f64;
        let out = Tensor::scalar(x.data().iter().sum::<f64>() / n);
        self.push(out, Op::Mean(a), "mean")
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.val(a).map(|x| k * x);
        self.push(out, Op::Scale(a, k), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let out = self.val(a).map(|x| x + k);
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        let out = self.val(a).map(|x| x.powf(p));
        self.push(out, Op::Pow(a, p), "pow")
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.val(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi), "clamp")
    }

    /// Sums the rows of `a` into `segments` rows by segment id, in row order.
    pub fn segment_sum(&mut self, a: Var, ids: Rc<Vec<usize>>, segments: usize) -> Result<Var> {
        let x = self.val(a);
        if ids.len() != x.rows() {
            return Err(Error::ShapeMismatch {
                op: "segment_sum",
                left: x.shape(),
                right: (ids.len(), 1),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&s| s >= segments) {
            return Err(Error::Invalid(format!("segment id {bad} out of range for {segments} segments")));
        }
        let c = x.cols();
        let mut out = Tensor::zeros(segments, c);
        for (r, &s) in ids.iter().enumerate() {
            let src = x.row(r);
            for (o, v) in out.data_mut()[s * c..(s + 1) * c].iter_mut().zip(src) {
                *o += v;
            }
        }
        self.push(out, Op::SegmentSum(a, ids), "segment_sum")
    }

    /// Selects rows of `a` by index (repetition allowed).
    pub fn gather(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let x = self.val(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.rows()) {
            return Err(Error::Invalid(format!("gather index {bad} out of range for {} rows", x.rows())));
        }
        let c = x.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx.iter() {
            data.extend_from_slice(x.row(i));
        }
        let out = Tensor::new(idx.len(), c, data)?;
        self.push(out, Op::Gather(a, idx), "gather")
    }

    /// Reverse-mode gradients of a scalar `loss` with respect to every
    /// recorded value that depends on a parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.val(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let acc = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        acc(*a, gemm(&g, false, self.val(*b), true), &mut grads);
                    }
                    if self.nodes[b.0].needs_grad {
                        acc(*b, gemm(self.val(*a), true, &g, false), &mut grads);
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.map(|x| -x), &mut grads);
                }
                Op::AddRow(a, r) => {
                    let c = g.cols();
                    let mut rg = Tensor::zeros(1, c);
                    for (k, v) in g.data().iter().enumerate() {
                        rg.data_mut()[k % c] += v;
                    }
                    acc(*a, g, &mut grads);
                    acc(*r, rg, &mut grads);
                }
                Op::Mul(a, b) => {
                    acc(*a, g.zip(self.val(*b), |x, y| x * y), &mut grads);
                    acc(*b, g.zip(self.val(*a), |x, y| x * y), &mut grads);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let c = self.val(*p).cols();
                        let mut data = Vec::with_capacity(g.rows() * c);
                        for r in 0..g.rows() {
                            data.extend_from_slice(&g.row(r)[offset..offset + c]);
                        }
                        offset += c;
                        acc(*p, Tensor::new(g.rows(), c, data)?, &mut grads);
                    }
                }
                Op::Relu(a) => {
                    let t = g.zip(self.val(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    acc(*a, t, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let t = g.zip(&node.value, |x, s| x * s * (1.0 - s));
                    acc(*a, t, &mut grads);
                }
                Op::Log(a) => {
                    let t = g.zip(self.val(*a), |x, y| x / y);
                    acc(*a, t, &mut grads);
                }
                Op::Sum(a) => {
                    let (r, c) = self.val(*a).shape();
                    acc(*a, Tensor::full(r, c, g.data()[0]), &mut grads);
                }
                Op::Mean(a) => {
                    let (r, c) = self.val(*a).shape();
                    let n = (r * c).max(1) as f64;
                    acc(*a, Tensor::full(r, c, g.data()[0] / n), &mut grads);
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(*a, g.map(|x| k * x), &mut grads);
                }
                Op::AddScalar(a) => acc(*a, g, &mut grads),
                Op::Pow(a, p) => {
                    let p = *p;
                    let t = g.zip(self.val(*a), |x, y| if p == 0.0 { 0.0 } else { x * p * y.powf(p - 1.0) });
                    acc(*a, t, &mut grads);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let t = g.zip(self.val(*a), |x, y| if y >= lo && y <= hi { x } else { 0.0 });
                    acc(*a, t, &mut grads);
                }
                Op::SegmentSum(a, ids) => {
                    let c = g.cols();
                    let mut data = Vec::with_capacity(ids.len() * c);
                    for &s in ids.iter() {
                        data.extend_from_slice(g.row(s));
                    }
                    acc(*a, Tensor::new(ids.len(), c, data)?, &mut grads);
                }
                Op::Gather(a, idx) => {
                    let x = self.val(*a);
                    let c = x.cols();
                    let mut t = Tensor::zeros(x.rows(), c);
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, v) in t.data_mut()[i * c..(i + 1) * c].iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*a, t, &mut grads);
                }
            }
        }
        Ok(Gradients(grads))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
