//! Tape-based reverse-mode differentiation over dense [`Tensor`]s.
//!
//! A [`Tape`] records every primitive application in execution order, so the
//! node list is already a topological order. [`Tape::backward`] sweeps it in
//! reverse and accumulates adjoints into one slot per node.
//!
//! Inputs enter the tape either as parameters (gradients requested) or as
//! constants. Both may borrow their tensor, which keeps frozen model weights
//! from being copied onto every per-group tape.

mod gradcheck;

use std::borrow::Cow;

pub use gradcheck::{grad_check, grad_check_fn, GradCheckOptions, GradCheckReport};

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt, matmul_tn, Tensor};

/// Stability constant inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    VStack(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Exp(Var),
    Log(Var),
    Abs(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, rstd: Vec<f64> },
    SelectRows(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    Reshape(Var),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph for a single forward pass.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the output does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.slots.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when the output does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::contract(format!(
        "{op}: incompatible shapes {:?} and {:?}",
        a.shape(),
        b.shape()
    ))
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn leaf(&mut self, value: Cow<'a, Tensor>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input owned by the tape.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(Cow::Owned(t), true)
    }

    /// Differentiable input borrowed from the caller.
    pub fn param_ref(&mut self, t: &'a Tensor) -> Var {
        self.leaf(Cow::Borrowed(t), true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(Cow::Owned(t), false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.leaf(Cow::Borrowed(t), false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    /// Copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() > 2 {
            return Err(Error::contract("transpose expects a matrix"));
        }
        let out = t.transpose();
        Ok(self.push(out, Op::Transpose(a), &[a]))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    fn row_broadcast(&self, op: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        let c = ta.cols();
        if tb.len() != c {
            return Err(shape_err(op, ta, tb));
        }
        let mut out = ta.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o = f(*o, bv);
            }
        }
        Ok(out)
    }

    /// Adds a length-`cols` vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.row_broadcast("add_row", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::AddRow(a, b), &[a, b]))
    }

    /// Multiplies every row of `a` elementwise by a length-`cols` vector.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.row_broadcast("mul_row", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::MulRow(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddScalar(a), &[a])
    }

    /// Concatenates along the last axis; all parts must have equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let rows = self.value(*first).rows();
        let all_vectors = parts.iter().all(|p| self.value(*p).shape().len() == 1);
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = self.value(*p);
            if t.rows() != rows || t.shape().len() > 2 {
                return Err(shape_err("concat", self.value(*first), t));
            }
            widths.push(t.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let shape = if all_vectors { vec![total] } else { vec![rows, total] };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, Op::Concat(parts.to_vec()), parts))
    }

    /// Stacks matrices (or vectors, as single rows) vertically.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("vstack of zero tensors"))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols || t.shape().len() > 2 {
                return Err(shape_err("vstack", self.value(*first), t));
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![data.len() / cols, cols], data)?;
        Ok(self.push(out, Op::VStack(parts.to_vec()), parts))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if let Some(x) = t.data().iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::domain(format!("log of non-positive value {x}")));
        }
        let out = t.map(f64::ln);
        Ok(self.push(out, Op::Log(a), &[a]))
    }

    /// Absolute value; the derivative at zero is taken as zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::abs);
        self.push(out, Op::Abs(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), &[a])
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a), &[a])
    }

    /// Row-wise softmax with row-max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            softmax_in_place(row);
        }
        self.push(out, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise normalization to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols();
        let mut rstds = Vec::with_capacity(out.rows());
        for row in out.data_mut().chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * rstd;
            }
            rstds.push(rstd);
        }
        self.push(out, Op::LayerNorm { x: a, rstd: rstds }, &[a])
    }

    /// Gathers whole rows of a matrix, in the given order (repeats allowed).
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = t.dims2();
        if rows.is_empty() {
            return Err(Error::contract("select_rows with no rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::contract(format!("row {i} out of range for {r} rows")));
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![rows.len(), c], data)?;
        Ok(self.push(out, Op::SelectRows(a, rows.to_vec()), &[a]))
    }

    /// Gathers individual elements by flat index into a vector.
    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if idx.is_empty() {
            return Err(Error::contract("gather with no indices"));
        }
        let mut data = Vec::with_capacity(idx.len());
        for &i in idx {
            data.push(
                *t.data()
                    .get(i)
                    .ok_or_else(|| Error::contract(format!("index {i} out of range")))?,
            );
        }
        Ok(self.push(Tensor::vector(data), Op::Gather(a, idx.to_vec()), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if !self.value(output).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        let n = self.nodes.len();
        let mut slots: Vec<Option<Tensor>> = vec![None; n];
        slots[output.0] = Some(Tensor::filled(self.value(output).shape(), 1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = slots[i].take() else { continue };
            self.propagate(i, &g, &mut slots);
            slots[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { slots, shapes })
    }

    fn accumulate(&self, slots: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut slots[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                let shape = self.nodes[v.0].value.shape().to_vec();
                *slot = Some(g.reshaped(shape).expect("gradient size matches node"));
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, slots: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2();
                let n = tb.cols();
                if self.wants(*a) {
                    let ga = matmul_nt(g.data(), tb.data(), m, n, k);
                    self.accumulate(slots, *a, Tensor::new(vec![m * k], ga).unwrap());
                }
                if self.wants(*b) {
                    let gb = matmul_tn(ta.data(), g.data(), m, k, n);
                    self.accumulate(slots, *b, Tensor::new(vec![k * n], gb).unwrap());
                }
            }
            Op::Transpose(a) => {
                let (r, c) = self.value(*a).dims2();
                let gt = g.clone().reshaped(vec![c, r]).unwrap().transpose();
                self.accumulate(slots, *a, gt);
            }
            Op::Add(a, b) => {
                self.accumulate(slots, *a, g.clone());
                self.accumulate(slots, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(slots, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(slots, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(slots, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.wants(*b) {
                    self.accumulate(slots, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(slots, *a, g.clone());
                if self.wants(*b) {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (acc, x) in gb.iter_mut().zip(row) {
                            *acc += x;
                        }
                    }
                    self.accumulate(slots, *b, Tensor::vector(gb));
                }
            }
            Op::MulRow(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = ta.cols();
                if self.wants(*a) {
                    let mut ga = g.clone();
                    for row in ga.data_mut().chunks_mut(c) {
                        for (x, y) in row.iter_mut().zip(tb.data()) {
                            *x *= y;
                        }
                    }
                    self.accumulate(slots, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; c];
                    for (grow, arow) in g.data().chunks(c).zip(ta.data().chunks(c)) {
                        for ((acc, x), y) in gb.iter_mut().zip(grow).zip(arow) {
                            *acc += x * y;
                        }
                    }
                    self.accumulate(slots, *b, Tensor::vector(gb));
                }
            }
            Op::Scale(a, k) => self.accumulate(slots, *a, g.map(|x| x * k)),
            Op::AddScalar(a) | Op::Reshape(a) => self.accumulate(slots, *a, g.clone()),
            Op::Concat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.wants(*p) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        self.accumulate(slots, *p, Tensor::new(vec![rows * w], data).unwrap());
                    }
                    offset += w;
                }
            }
            Op::VStack(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).len();
                    if self.wants(*p) {
                        let d = g.data()[offset..offset + n].to_vec();
                        self.accumulate(slots, *p, Tensor::new(vec![n], d).unwrap());
                    }
                    offset += n;
                }
            }
            Op::Sum(a) => {
                let t = self.value(*a);
                self.accumulate(slots, *a, Tensor::filled(t.shape(), g.item()));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                self.accumulate(slots, *a, Tensor::filled(t.shape(), g.item() / t.len() as f64));
            }
            Op::Exp(a) => self.accumulate(slots, *a, g.zip_map(out, |x, y| x * y)),
            Op::Log(a) => self.accumulate(slots, *a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Abs(a) => {
                let d = g.zip_map(self.value(*a), |x, y| {
                    if y > 0.0 {
                        x
                    } else if y < 0.0 {
                        -x
                    } else {
                        0.0
                    }
                });
                self.accumulate(slots, *a, d);
            }
            Op::Sigmoid(a) => self.accumulate(slots, *a, g.zip_map(out, |x, y| x * y * (1.0 - y))),
            Op::Tanh(a) => self.accumulate(slots, *a, g.zip_map(out, |x, y| x * (1.0 - y * y))),
            Op::Softplus(a) => {
                self.accumulate(slots, *a, g.zip_map(self.value(*a), |x, y| x * sigmoid(y)))
            }
            Op::SoftmaxRows(a) => {
                let c = out.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                    for (x, y) in drow.iter_mut().zip(yrow) {
                        *x = y * (*x - dot);
                    }
                }
                self.accumulate(slots, *a, d);
            }
            Op::LayerNorm { x, rstd } => {
                let c = out.cols();
                let mut d = g.clone();
                for ((drow, yrow), r) in d.data_mut().chunks_mut(c).zip(out.data().chunks(c)).zip(rstd) {
                    let mean_g = drow.iter().sum::<f64>() / c as f64;
                    let mean_gy = drow.iter().zip(yrow).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for (gx, y) in drow.iter_mut().zip(yrow) {
                        *gx = r * (*gx - mean_g - y * mean_gy);
                    }
                }
                self.accumulate(slots, *x, d);
            }
            Op::SelectRows(a, rows) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut d = Tensor::zeros(t.shape());
                for (k, &r) in rows.iter().enumerate() {
                    let src = &g.data()[k * c..(k + 1) * c];
                    for (o, s) in d.data_mut()[r * c..(r + 1) * c].iter_mut().zip(src) {
                        *o += s;
                    }
                }
                self.accumulate(slots, *a, d);
            }
            Op::Gather(a, idx) => {
                let mut d = Tensor::zeros(self.value(*a).shape());
                for (k, &j) in idx.iter().enumerate() {
                    d.data_mut()[j] += g.data()[k];
                }
                self.accumulate(slots, *a, d);
            }
        }
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

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x /= z;
    }
}
