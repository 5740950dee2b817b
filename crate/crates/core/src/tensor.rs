//! Dense `f64` tensors and a reverse-mode differentiation tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation appends a
//! node holding its output value and enough bookkeeping to run its backward
//! rule. [`Graph::backward`] walks the nodes once in reverse order.
//!
//! Gradients accumulate: calling `backward` twice on the same graph adds the
//! second pass onto the first. Use [`Graph::zero_grads`] (or
//! [`Tensor::zero_grad`] on parameters) to reset.
//!
//! Broadcasting in binary ops is limited to three cases: equal shapes, a
//! trailing-axis row vector (`[n]` or `[1, n]` against `[.., n]`), and a
//! single-element scalar. Anything else is a dimension error.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default)]
    requires_grad: bool,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Contract(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; n]).expect("valid zero shape")
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; n]).expect("valid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value]).expect("scalar")
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor::new(vec![data.len()], data).expect("non-empty vector")
    }

    /// Row-major matrix from nested rows.
    pub fn matrix(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Contract("ragged matrix rows".into()));
        }
        Tensor::new(vec![r, c], rows.concat())
    }

    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(shape.to_vec(), data).expect("valid shape")
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `delta` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        assert_eq!(delta.len(), self.data.len(), "gradient length mismatch");
        match &mut self.grad {
            Some(g) => g.iter_mut().zip(delta).for_each(|(a, b)| *a += b),
            None => self.grad = Some(delta.to_vec()),
        }
    }

    /// Shape viewed as a matrix: rank-1 `[n]` is `(1, n)`, higher ranks fold
    /// leading axes into rows.
    pub fn dims2(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("non-empty shape");
        (self.data.len() / cols, cols)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        let (_, c) = self.dims2();
        self.data[row * c + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn reshaped(&self, shape: &[usize]) -> Result<Self> {
        let mut t = Tensor::new(shape.to_vec(), self.data.clone())?;
        t.requires_grad = self.requires_grad;
        Ok(t)
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Binary(Binary, Var, Var, Bcast),
    MulCol(Var, Var),
    Affine(Var, f64),
    Unary(Unary, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Reshape(Var),
    SoftmaxMasked(Var),
    LayerNorm(Var, Vec<f64>),
    Gather(Var, Vec<Option<usize>>),
    SelectRows(Var, Var, Vec<bool>),
    MaxOf(Vec<Var>, Vec<usize>),
    Sum(Var),
    Mean(Var),
    WeightedBce(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Row-major `c (+)= op(a) · op(b)` where `op` optionally transposes.
///
/// `a` is stored `[m, k]` (or `[k, m]` when `ta`), `b` is `[k, n]` (or
/// `[n, k]` when `tb`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: slice lengths checked above; strides describe row-major
    // (optionally transposed) layouts that stay inside those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

/// Lower and upper probability clamp used by the weighted BCE loss.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].value.requires_grad);
        let mut value = Tensor::new(shape, data).expect("op produced consistent shape");
        value.requires_grad = rg;
        self.push(value, op)
    }

    /// Records a leaf, keeping the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.grad = None;
        self.push(value, Op::Leaf)
    }

    /// Records a differentiable leaf (a copy of a parameter).
    pub fn param(&mut self, value: &Tensor) -> Var {
        let mut t = value.clone();
        t.requires_grad = true;
        self.leaf(t)
    }

    /// Records a non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
    }

    fn rank2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(Error::dim(op, s, &[]));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2(a, "matmul")?;
        let (k2, n) = self.rank2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            &mut out,
            0.0,
        );
        Ok(self.derived(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.rank2(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.derived(vec![n, m], out, Op::Transpose(a), &[a]))
    }

    fn bcast(&self, a: Var, b: Var, op: &'static str) -> Result<Bcast> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            return Ok(Bcast::Same);
        }
        let nb = self.value(b).numel();
        if nb == 1 {
            return Ok(Bcast::Scalar);
        }
        let last = *sa.last().expect("shape");
        let row_like = match sb {
            [n] => *n == last,
            [1, n] => *n == last,
            _ => false,
        };
        if row_like {
            Ok(Bcast::Row)
        } else {
            Err(Error::dim(op, sa, sb))
        }
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let bc = self.bcast(a, b, name)?;
        let va = self.value(a);
        let vb = self.value(b).data();
        let cols = *va.shape().last().expect("shape");
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let out: Vec<f64> = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match bc {
                    Bcast::Same => vb[i],
                    Bcast::Row => vb[i % cols],
                    Bcast::Scalar => vb[0],
                };
                f(x, y)
            })
            .collect();
        let shape = va.shape().to_vec();
        Ok(self.derived(shape, out, Op::Binary(kind, a, b, bc), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Scales each row of `a [m, n]` by the matching entry of `col [m, 1]`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (m, n) = self.rank2(a, "mul_col")?;
        let sc = self.shape(col);
        if !(sc == [m, 1] || sc == [m]) {
            return Err(Error::dim("mul_col", self.shape(a), sc));
        }
        let (va, vc) = (self.value(a).data(), self.value(col).data());
        let out = (0..m * n).map(|i| va[i] * vc[i / n]).collect();
        Ok(self.derived(vec![m, n], out, Op::MulCol(a, col), &[a, col]))
    }

    /// `alpha * a + beta`.
    pub fn affine(&mut self, a: Var, alpha: f64, beta: f64) -> Result<Var> {
        let va = self.value(a);
        let out = va.data().iter().map(|&x| alpha * x + beta).collect();
        let shape = va.shape().to_vec();
        Ok(self.derived(shape, out, Op::Affine(a, alpha), &[a]))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Result<Var> {
        self.affine(a, alpha, 0.0)
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = va
            .data()
            .iter()
            .map(|&x| match kind {
                Unary::Sigmoid => sigmoid(x),
                Unary::Tanh => x.tanh(),
                Unary::Relu => x.max(0.0),
            })
            .collect();
        let shape = va.shape().to_vec();
        Ok(self.derived(shape, out, Op::Unary(kind, a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    /// Concatenates along the last axis. Inputs must agree on row count.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (rows, _) = self.value(first).dims2();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if r != rows {
                return Err(Error::dim("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = self.shape(first).to_vec();
        *shape.last_mut().expect("shape") = total;
        if shape.len() == 1 && rows > 1 {
            shape = vec![rows, total];
        }
        Ok(self.derived(shape, out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Stacks rank-2 (or rank-1, as single rows) tensors vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (_, cols) = self.value(first).dims2();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if c != cols {
                return Err(Error::dim("concat_rows", self.shape(first), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.derived(vec![rows, cols], out, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if len == 0 || start + len > m {
            return Err(Error::dim("slice_rows", self.shape(a), &[start, len]));
        }
        let out = self.value(a).data()[start * n..(start + len) * n].to_vec();
        Ok(self.derived(vec![len, n], out, Op::SliceRows(a, start), &[a]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        if len == 0 || start + len > n {
            return Err(Error::dim("slice_cols", self.shape(a), &[start, len]));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * len);
        for r in 0..m {
            out.extend_from_slice(&src[r * n + start..r * n + start + len]);
        }
        Ok(self.derived(vec![m, len], out, Op::SliceCols(a, start), &[a]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(a).numel() || shape.contains(&0) {
            return Err(Error::dim("reshape", self.shape(a), shape));
        }
        let out = self.value(a).data().to_vec();
        Ok(self.derived(shape.to_vec(), out, Op::Reshape(a), &[a]))
    }

    /// Row-wise softmax over the last axis where `mask[i]` (same length as
    /// `scores`) marks live entries. Masked entries get exactly zero weight.
    pub fn softmax_masked(&mut self, scores: Var, mask: &[bool]) -> Result<Var> {
        let (m, n) = self.value(scores).dims2();
        if mask.len() != m * n {
            return Err(Error::dim(
                "softmax_masked",
                self.shape(scores),
                &[mask.len()],
            ));
        }
        let src = self.value(scores).data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let live = &mask[r * n..(r + 1) * n];
            let max = row
                .iter()
                .zip(live)
                .filter(|(_, &l)| l)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::InvalidMask(format!("row {r} has no live position")));
            }
            let dst = &mut out[r * n..(r + 1) * n];
            let mut total = 0.0;
            for j in 0..n {
                if live[j] {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            dst.iter_mut().for_each(|v| *v /= total);
        }
        let shape = self.shape(scores).to_vec();
        Ok(self.derived(shape, out, Op::SoftmaxMasked(scores), &[scores]))
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (m, n) = self.value(a).dims2();
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        for r in 0..m {
            let row = &src[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out[r * n + j] = (row[j] - mean) * is;
            }
            inv_std.push(is);
        }
        let shape = self.shape(a).to_vec();
        Ok(self.derived(shape, out, Op::LayerNorm(a, inv_std), &[a]))
    }

    /// Gathers rows of `table [V, D]`; rows where `mask` is false are zero and
    /// never touch the table.
    pub fn gather(&mut self, table: Var, ids: &[usize], mask: &[bool]) -> Result<Var> {
        let (v, d) = self.rank2(table, "gather")?;
        let rows = gather_rows(self.value(table).data(), v, d, ids, mask)?;
        let n = ids.len();
        let sel = ids
            .iter()
            .zip(mask)
            .map(|(&i, &m)| m.then_some(i))
            .collect();
        Ok(self.derived(vec![n, d], rows, Op::Gather(table, sel), &[table]))
    }

    /// Gather from a table that is not part of the graph (frozen embeddings).
    pub fn gather_const(&mut self, table: &Tensor, ids: &[usize], mask: &[bool]) -> Result<Var> {
        if table.shape().len() != 2 {
            return Err(Error::dim("gather", table.shape(), &[]));
        }
        let (v, d) = (table.shape()[0], table.shape()[1]);
        let rows = gather_rows(table.data(), v, d, ids, mask)?;
        Ok(self.constant(Tensor::new(vec![ids.len(), d], rows)?))
    }

    /// Row-wise select: row `r` comes from `a` where `take_a[r]`, else from `b`.
    pub fn select_rows(&mut self, a: Var, b: Var, take_a: &[bool]) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("select_rows", self.shape(a), self.shape(b)));
        }
        let (m, n) = self.value(a).dims2();
        if take_a.len() != m {
            return Err(Error::dim("select_rows", self.shape(a), &[take_a.len()]));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(m * n);
        for (r, &t) in take_a.iter().enumerate() {
            let src = if t { va } else { vb };
            out.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let shape = self.shape(a).to_vec();
        Ok(self.derived(shape, out, Op::SelectRows(a, b, take_a.to_vec()), &[a, b]))
    }

    /// Elementwise max over same-shaped `[m, n]` inputs, where
    /// `valid[p][r]` says whether input `p` may win for row `r`. Rows with no
    /// valid input are zero. Ties go to the lowest index.
    pub fn max_of(&mut self, parts: &[Var], valid: &[Vec<bool>]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Contract("max over zero tensors".into()))?;
        let shape = self.shape(first).to_vec();
        let (m, n) = self.value(first).dims2();
        if valid.len() != parts.len() {
            return Err(Error::dim("max_of", &[parts.len()], &[valid.len()]));
        }
        for (p, v) in parts.iter().zip(valid) {
            if self.shape(*p) != shape.as_slice() || v.len() != m {
                return Err(Error::dim("max_of", &shape, self.shape(*p)));
            }
        }
        let mut out = vec![0.0; m * n];
        let mut arg = vec![usize::MAX; m * n];
        for (p, (&part, ok)) in parts.iter().zip(valid).enumerate() {
            let src = self.value(part).data();
            for r in (0..m).filter(|&r| ok[r]) {
                for j in 0..n {
                    let i = r * n + j;
                    if arg[i] == usize::MAX || src[i] > out[i] {
                        out[i] = src[i];
                        arg[i] = p;
                    }
                }
            }
        }
        Ok(self.derived(shape, out, Op::MaxOf(parts.to_vec(), arg), parts))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        Ok(self.derived(vec![1], vec![s], Op::Sum(a), &[a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        Ok(self.derived(vec![1], vec![s], Op::Mean(a), &[a]))
    }

    /// Mean class-weighted binary cross-entropy over a vector of logits.
    ///
    /// Per example: `-(w1·y·ln p + w0·(1-y)·ln(1-p))` with `p = σ(logit)`
    /// clamped to `[1e-7, 1-1e-7]` for the loss value. The gradient with
    /// respect to the logit is `w_y·(p - y) / B`, the exact derivative
    /// everywhere the clamp is inactive.
    pub fn weighted_bce(
        &mut self,
        logits: Var,
        targets: &[f64],
        weights: (f64, f64),
    ) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() {
            return Err(Error::dim(
                "weighted_bce",
                self.shape(logits),
                &[targets.len()],
            ));
        }
        let b = z.len() as f64;
        let mut loss = 0.0;
        let mut dz = Vec::with_capacity(z.len());
        for (&zi, &y) in z.iter().zip(targets) {
            let p = sigmoid(zi);
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            let w = if y > 0.5 { weights.1 } else { weights.0 };
            loss -= weights.1 * y * pc.ln() + weights.0 * (1.0 - y) * (1.0 - pc).ln();
            dz.push(w * (p - y) / b);
        }
        Ok(self.derived(
            vec![1],
            vec![loss / b],
            Op::WeightedBce(logits, dz),
            &[logits],
        ))
    }

    /// Runs the backward pass from a single-element `loss`, adding the result
    /// into the `grad` buffer of every differentiable node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(dy) = adj[i].take() else { continue };
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            self.propagate(i, &dy, &mut adj);
            adj[i] = Some(dy);
        }
        for (i, a) in adj.into_iter().enumerate() {
            if let Some(a) = a {
                let node = &mut self.nodes[i].value;
                if node.requires_grad {
                    node.accumulate_grad(&a);
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, dy: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let wants = |v: Var| self.nodes[v.0].value.requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !wants(v) {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let buf = adj[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2();
                let (_, n) = self.value(*b).dims2();
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |g| gemm(m, n, k, dy, false, vb, true, g, 1.0));
                acc(*b, &mut |g| gemm(k, m, n, va, true, dy, false, g, 1.0));
            }
            Op::Transpose(a) => {
                let (m, n) = self.value(*a).dims2();
                acc(*a, &mut |g| {
                    for r in 0..m {
                        for c in 0..n {
                            g[r * n + c] += dy[c * m + r];
                        }
                    }
                });
            }
            Op::Binary(kind, a, b, bc) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let cols = *self.shape(*a).last().expect("shape");
                let bidx = |k: usize| match bc {
                    Bcast::Same => k,
                    Bcast::Row => k % cols,
                    Bcast::Scalar => 0,
                };
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += match kind {
                            Binary::Add | Binary::Sub => dy[k],
                            Binary::Mul => dy[k] * vb[bidx(k)],
                        };
                    }
                });
                acc(*b, &mut |g| {
                    for k in 0..dy.len() {
                        g[bidx(k)] += match kind {
                            Binary::Add => dy[k],
                            Binary::Sub => -dy[k],
                            Binary::Mul => dy[k] * va[k],
                        };
                    }
                });
            }
            Op::MulCol(a, c) => {
                let (_, n) = self.value(*a).dims2();
                let (va, vc) = (self.value(*a).data(), self.value(*c).data());
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        g[k] += dy[k] * vc[k / n];
                    }
                });
                acc(*c, &mut |g| {
                    for k in 0..dy.len() {
                        g[k / n] += dy[k] * va[k];
                    }
                });
            }
            Op::Affine(a, alpha) => acc(*a, &mut |g| {
                g.iter_mut().zip(dy).for_each(|(g, d)| *g += alpha * d);
            }),
            Op::Unary(kind, a) => {
                let x = self.value(*a).data();
                acc(*a, &mut |g| {
                    for k in 0..g.len() {
                        let d = match kind {
                            Unary::Sigmoid => out[k] * (1.0 - out[k]),
                            Unary::Tanh => 1.0 - out[k] * out[k],
                            Unary::Relu => {
                                if x[k] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                        g[k] += dy[k] * d;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = node.value.dims2();
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.value(*p).dims2();
                    acc(*p, &mut |g| {
                        for r in 0..rows {
                            for j in 0..w {
                                g[r * w + j] += dy[r * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    acc(*p, &mut |g| {
                        g.iter_mut()
                            .zip(&dy[offset..offset + n])
                            .for_each(|(g, d)| *g += d);
                    });
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let (_, n) = self.value(*a).dims2();
                acc(*a, &mut |g| {
                    g[start * n..start * n + dy.len()]
                        .iter_mut()
                        .zip(dy)
                        .for_each(|(g, d)| *g += d);
                });
            }
            Op::SliceCols(a, start) => {
                let (_, n) = self.value(*a).dims2();
                let (rows, len) = node.value.dims2();
                acc(*a, &mut |g| {
                    for r in 0..rows {
                        for j in 0..len {
                            g[r * n + start + j] += dy[r * len + j];
                        }
                    }
                });
            }
            Op::Reshape(a) => acc(*a, &mut |g| {
                g.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
            }),
            Op::SoftmaxMasked(a) => {
                let (m, n) = node.value.dims2();
                acc(*a, &mut |g| {
                    for r in 0..m {
                        let y = &out[r * n..(r + 1) * n];
                        let d = &dy[r * n..(r + 1) * n];
                        let dot: f64 = y.iter().zip(d).map(|(y, d)| y * d).sum();
                        for j in 0..n {
                            g[r * n + j] += y[j] * (d[j] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm(a, inv_std) => {
                let (m, n) = node.value.dims2();
                let nf = n as f64;
                acc(*a, &mut |g| {
                    for r in 0..m {
                        let y = &out[r * n..(r + 1) * n];
                        let d = &dy[r * n..(r + 1) * n];
                        let mean_d = d.iter().sum::<f64>() / nf;
                        let mean_dy = y.iter().zip(d).map(|(y, d)| y * d).sum::<f64>() / nf;
                        for j in 0..n {
                            g[r * n + j] += inv_std[r] * (d[j] - mean_d - y[j] * mean_dy);
                        }
                    }
                });
            }
            Op::Gather(table, sel) => {
                let (_, d) = self.value(*table).dims2();
                acc(*table, &mut |g| {
                    for (r, id) in sel.iter().enumerate() {
                        if let Some(id) = id {
                            for j in 0..d {
                                g[id * d + j] += dy[r * d + j];
                            }
                        }
                    }
                });
            }
            Op::SelectRows(a, b, take_a) => {
                let (_, n) = node.value.dims2();
                for (v, want) in [(*a, true), (*b, false)] {
                    acc(v, &mut |g| {
                        for (r, &t) in take_a.iter().enumerate() {
                            if t == want {
                                for j in 0..n {
                                    g[r * n + j] += dy[r * n + j];
                                }
                            }
                        }
                    });
                }
            }
            Op::MaxOf(parts, arg) => {
                for (p, v) in parts.iter().enumerate() {
                    acc(*v, &mut |g| {
                        for (k, &winner) in arg.iter().enumerate() {
                            if winner == p {
                                g[k] += dy[k];
                            }
                        }
                    });
                }
            }
            Op::Sum(a) => acc(*a, &mut |g| g.iter_mut().for_each(|g| *g += dy[0])),
            Op::Mean(a) => {
                let n = self.value(*a).numel() as f64;
                acc(*a, &mut |g| g.iter_mut().for_each(|g| *g += dy[0] / n));
            }
            Op::WeightedBce(a, dz) => acc(*a, &mut |g| {
                g.iter_mut().zip(dz).for_each(|(g, d)| *g += dy[0] * d);
            }),
        }
    }
}

fn gather_rows(
    table: &[f64],
    v: usize,
    d: usize,
    ids: &[usize],
    mask: &[bool],
) -> Result<Vec<f64>> {
    if ids.len() != mask.len() || ids.is_empty() {
        return Err(Error::dim("gather", &[ids.len()], &[mask.len()]));
    }
    let mut rows = vec![0.0; ids.len() * d];
    for (r, (&id, &live)) in ids.iter().zip(mask).enumerate() {
        if id >= v {
            return Err(Error::Lookup { id, rows: v });
        }
        if live {
            rows[r * d..(r + 1) * d].copy_from_slice(&table[id * d..(id + 1) * d]);
        }
    }
    Ok(rows)
}

/// Central-difference gradient check of a scalar function of one tensor.
///
/// Returns the largest `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`
/// over all coordinates. A NaN anywhere yields NaN.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    grad_check_many(|g, vs| f(g, vs[0]), std::slice::from_ref(x), eps)
}

/// [`grad_check`] over several input tensors at once.
pub fn grad_check_many<F>(f: F, xs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::Config("grad_check eps must be positive".into()));
    }
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = xs.iter().map(|t| g.param(t)).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;

    let mut worst: f64 = 0.0;
    let mut inputs: Vec<Tensor> = xs.to_vec();
    for (ti, v) in vars.iter().enumerate() {
        let analytic = g
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; xs[ti].numel()]);
        for (k, &a) in analytic.iter().enumerate() {
            let orig = xs[ti].data()[k];
            inputs[ti].data_mut()[k] = orig + eps;
            let fp = eval(&inputs)?;
            inputs[ti].data_mut()[k] = orig - eps;
            let fm = eval(&inputs)?;
            inputs[ti].data_mut()[k] = orig;
            let numeric = (fp - fm) / (2.0 * eps);
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            if err.is_nan() {
                return Ok(f64::NAN);
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
