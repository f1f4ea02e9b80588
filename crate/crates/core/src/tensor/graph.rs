use crate::error::{Error, Result};

use super::kernels::{self, ConvShape};
use super::params::{Gradients, ParamId, ParamStore};
use super::{numel, Tensor};

/// Handle to a node on a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Storage {
    Param(ParamId),
    Owned(Vec<f64>),
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine { x: Var, scale: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Nll { logp: Var, target: usize },
    Sum(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Reshape(Var),
    Gather { table: Var, indices: Vec<usize> },
    Conv1d { seq: Var, kernels: Var, bias: Var, shape: ConvShape },
    MaxOverTime { x: Var, argmax: Vec<usize>, width: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    storage: Storage,
    op: Op,
    needs_grad: bool,
}

/// A tape of operations recorded during one forward pass.
pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

/// Splits `shape` around `axis` into (outer, axis extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
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

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), data.len());
        self.nodes.push(Node {
            shape,
            storage: Storage::Owned(data),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].storage {
            Storage::Param(id) => self.store.get(*id).data(),
            Storage::Owned(data) => data,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor {
            shape: self.shape(v).to_vec(),
            data: self.value(v).to_vec(),
        }
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Leaf for a parameter. Repeated calls return the same node, so every
    /// use of a parameter within one pass shares a gradient buffer.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            shape: self.store.get(id).shape().to_vec(),
            storage: Storage::Param(id),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Leaf holding data that is not differentiated.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.shape, t.data, Op::Leaf, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    /// Matrix product with numpy-style promotion of rank-1 operands:
    /// `[m×k]·[k×n]`, `[m×k]·[k]` and `[k]·[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, a_vec) = match sa {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        let (k2, n, b_vec) = match sb {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            _ => return Err(Error::shape("matmul", sa, sb)),
        };
        if k != k2 || (a_vec && b_vec) {
            return Err(Error::shape("matmul", sa, sb));
        }
        let shape = match (a_vec, b_vec) {
            (false, false) => vec![m, n],
            (false, true) => vec![m],
            _ => vec![n],
        };
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a), self.value(b), m, k, n, &mut out);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, out, Op::MatMul { a, b, m, k, n }, ng))
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "add", |x, y| x + y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "sub", |x, y| x - y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Sub(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary(a, b, "mul", |x, y| x * y)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b), ng))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).iter().map(|v| scale * v + shift).collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), out, Op::Affine { x, scale }, ng)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).iter().map(|v| f(*v)).collect();
        let ng = self.needs(x);
        self.push(self.shape(x).to_vec(), out, op, ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    fn require_vector(&self, x: Var, op: &'static str) -> Result<usize> {
        match self.shape(x) {
            [n] => Ok(*n),
            s => Err(Error::shape(op, s, &[s.iter().product()])),
        }
    }

    /// Max-shifted softmax over a vector.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.require_vector(x, "softmax")?;
        let mut out = self.value(x).to_vec();
        softmax_in_place(&mut out);
        let ng = self.needs(x);
        Ok(self.push(vec![n], out, Op::Softmax(x), ng))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let n = self.require_vector(x, "log_softmax")?;
        let v = self.value(x);
        let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let out = v.iter().map(|x| x - lse).collect();
        let ng = self.needs(x);
        Ok(self.push(vec![n], out, Op::LogSoftmax(x), ng))
    }

    /// `-logp[target]` as a scalar.
    pub fn nll_loss(&mut self, logp: Var, target: usize) -> Result<Var> {
        let n = self.require_vector(logp, "nll_loss")?;
        if target >= n {
            return Err(Error::IndexOutOfRange {
                what: "nll target",
                index: target,
                size: n,
            });
        }
        let out = vec![-self.value(logp)[target]];
        let ng = self.needs(logp);
        Ok(self.push(Vec::new(), out, Op::Nll { logp, target }, ng))
    }

    /// `nll_loss(log_softmax(logits), target)`
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let logp = self.log_softmax(logits)?;
        self.nll_loss(logp, target)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = vec![self.value(x).iter().sum()];
        let ng = self.needs(x);
        self.push(Vec::new(), out, Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Adds nodes of identical shape.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars.split_first().ok_or(Error::EmptyInput)?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or(Error::EmptyInput)?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut shape = base.clone();
        shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            shape[axis] += s[axis];
        }
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for &p in parts {
                let span = self.shape(p)[axis] * inner;
                out.extend_from_slice(&self.value(p)[o * span..(o + 1) * span]);
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            ng,
        ))
    }

    /// Stacks same-shaped nodes along a new leading axis.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let reshaped = rows
            .iter()
            .map(|&r| {
                let mut s = vec![1];
                s.extend_from_slice(self.shape(r));
                self.reshape(r, &s)
            })
            .collect::<Result<Vec<_>>>()?;
        self.concat(&reshaped, 0)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::shape("slice", &s, &[axis, start, len]));
        }
        let (outer, extent, inner) = split_axis(&s, axis);
        let mut shape = s.clone();
        shape[axis] = len;
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * extent * inner + start * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let ng = self.needs(x);
        Ok(self.push(shape, out, Op::Slice { x, axis, start }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            return Err(Error::shape("reshape", self.shape(x), shape));
        }
        let out = self.value(x).to_vec();
        let ng = self.needs(x);
        Ok(self.push(shape.to_vec(), out, Op::Reshape(x), ng))
    }

    fn gather(&mut self, table: Var, indices: &[usize], single: bool) -> Result<Var> {
        let (rows, dim) = match self.shape(table) {
            [r, d] => (*r, *d),
            s => return Err(Error::shape("embedding", s, &[0, 0])),
        };
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::IndexOutOfRange {
                what: "embedding table",
                index: bad,
                size: rows,
            });
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&t[i * dim..(i + 1) * dim]);
        }
        let shape = if single {
            vec![dim]
        } else {
            vec![indices.len(), dim]
        };
        let ng = self.needs(table);
        Ok(self.push(
            shape,
            out,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            ng,
        ))
    }

    /// Row `index` of a `[V×d]` table.
    pub fn embedding(&mut self, table: Var, index: usize) -> Result<Var> {
        self.gather(table, &[index], true)
    }

    /// Rows of a `[V×d]` table as a `[n×d]` matrix.
    pub fn embedding_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        if indices.is_empty() {
            return Err(Error::EmptyInput);
        }
        self.gather(table, indices, false)
    }

    /// Bank of valid convolutions: `seq [T×d]`, `kernels [F×k×d]`,
    /// `bias [F]` gives `[F×(T−k+1)]`.
    pub fn conv1d_bank(&mut self, seq: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (len, dim) = match self.shape(seq) {
            [t, d] => (*t, *d),
            s => return Err(Error::shape("conv1d", s, self.shape(kernels))),
        };
        let (filters, kernel) = match self.shape(kernels) {
            [f, k, d] if *d == dim => (*f, *k),
            s => return Err(Error::shape("conv1d", self.shape(seq), s)),
        };
        if self.shape(bias) != [filters] {
            return Err(Error::shape("conv1d bias", self.shape(bias), &[filters]));
        }
        if len < kernel {
            return Err(Error::SequenceTooShort { len, kernel });
        }
        let shape = ConvShape {
            filters,
            kernel,
            dim,
            len,
        };
        let mut out = vec![0.0; filters * shape.positions()];
        kernels::conv1d(
            self.value(seq),
            self.value(kernels),
            self.value(bias),
            shape,
            &mut out,
        );
        let ng = self.needs(seq) || self.needs(kernels) || self.needs(bias);
        Ok(self.push(
            vec![filters, shape.positions()],
            out,
            Op::Conv1d {
                seq,
                kernels,
                bias,
                shape,
            },
            ng,
        ))
    }

    /// Single-filter valid convolution: `seq [T×d]`, `kernel [k×d]`, scalar
    /// `bias` gives `[T−k+1]`.
    pub fn conv1d_valid(&mut self, seq: Var, kernel: Var, bias: Var) -> Result<Var> {
        let mut ks = vec![1];
        ks.extend_from_slice(self.shape(kernel));
        let kernel = self.reshape(kernel, &ks)?;
        let bias = self.reshape(bias, &[1])?;
        let out = self.conv1d_bank(seq, kernel, bias)?;
        let n = self.shape(out)[1];
        self.reshape(out, &[n])
    }

    /// Max over the last axis, considering only the first `valid` entries.
    /// Gradient flows to the first maximal position. A vector reduces to a
    /// scalar, a `[F×n]` matrix to `[F]`.
    pub fn max_over_time_masked(&mut self, x: Var, valid: usize) -> Result<Var> {
        let (rows, width, shape) = match self.shape(x) {
            [n] => (1, *n, Vec::new()),
            [f, n] => (*f, *n, vec![*f]),
            s => return Err(Error::shape("max_over_time", s, &[])),
        };
        if valid == 0 || valid > width {
            return Err(Error::IndexOutOfRange {
                what: "max_over_time mask",
                index: valid,
                size: width,
            });
        }
        let v = self.value(x);
        let mut argmax = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &v[r * width..r * width + valid];
            let mut best = 0;
            for (i, val) in row.iter().enumerate().skip(1) {
                if *val > row[best] {
                    best = i;
                }
            }
            argmax.push(best);
            out.push(row[best]);
        }
        let ng = self.needs(x);
        Ok(self.push(shape, out, Op::MaxOverTime { x, argmax, width }, ng))
    }

    pub fn max_over_time(&mut self, x: Var) -> Result<Var> {
        let width = *self.shape(x).last().unwrap_or(&1);
        self.max_over_time_masked(x, width)
    }

    /// Reverse pass from a scalar `loss`; parameter gradients are added to
    /// `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(self.shape(loss).to_vec()));
        }
        let mut buf: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        buf[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = buf[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut buf, grads);
        }
        Ok(())
    }

    fn grad_of<'b>(&self, buf: &'b mut [Option<Vec<f64>>], v: Var) -> Option<&'b mut [f64]> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let len = self.value(v).len();
        Some(buf[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&self, node: &Node, g: &[f64], buf: &mut [Option<Vec<f64>>], grads: &mut Gradients) {
        let out = match &node.storage {
            Storage::Owned(d) => d.as_slice(),
            Storage::Param(_) => &[],
        };
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => grads.accumulate(*id, g),
            &Op::MatMul { a, b, m, k, n } => {
                let (va, vb) = (self.value(a), self.value(b));
                if let Some(da) = self.grad_of(buf, a) {
                    kernels::matmul_grad_a(g, vb, m, k, n, da);
                }
                if let Some(db) = self.grad_of(buf, b) {
                    kernels::matmul_grad_b(va, g, m, k, n, db);
                }
            }
            &Op::Add(a, b) => {
                if let Some(da) = self.grad_of(buf, a) {
                    kernels::axpy(1.0, g, da);
                }
                if let Some(db) = self.grad_of(buf, b) {
                    kernels::axpy(1.0, g, db);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(da) = self.grad_of(buf, a) {
                    kernels::axpy(1.0, g, da);
                }
                if let Some(db) = self.grad_of(buf, b) {
                    kernels::axpy(-1.0, g, db);
                }
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                if let Some(da) = self.grad_of(buf, a) {
                    for ((d, gi), y) in da.iter_mut().zip(g).zip(vb) {
                        *d += gi * y;
                    }
                }
                if let Some(db) = self.grad_of(buf, b) {
                    for ((d, gi), x) in db.iter_mut().zip(g).zip(va) {
                        *d += gi * x;
                    }
                }
            }
            &Op::Affine { x, scale } => {
                if let Some(dx) = self.grad_of(buf, x) {
                    kernels::axpy(scale, g, dx);
                }
            }
            &Op::Sigmoid(x) => {
                if let Some(dx) = self.grad_of(buf, x) {
                    for ((d, gi), y) in dx.iter_mut().zip(g).zip(out) {
                        *d += gi * y * (1.0 - y);
                    }
                }
            }
            &Op::Tanh(x) => {
                if let Some(dx) = self.grad_of(buf, x) {
                    for ((d, gi), y) in dx.iter_mut().zip(g).zip(out) {
                        *d += gi * (1.0 - y * y);
                    }
                }
            }
            &Op::Relu(x) => {
                if let Some(dx) = self.grad_of(buf, x) {
                    for ((d, gi), y) in dx.iter_mut().zip(g).zip(out) {
                        if *y > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            &Op::Softmax(x) => {
                if let Some(dx) = self.grad_of(buf, x) {
                    let inner = kernels::dot(g, out);
                    for ((d, gi), y) in dx.iter_mut().zip(g).zip(out) {
                        *d += y * (gi - inner);
                    }
                }
            }
            &Op::LogSoftmax(x) => {
                if let Some(dx) = self.grad_of(buf, x) {
                    let total: f64 = g.iter().sum();
                    for ((d, gi), lp) in dx.iter_mut().zip(g).zip(out) {
                        *d += gi - lp.exp() * total;
                    }
                }
            }
            &Op::Nll { logp, target } => {
                if let Some(dl) = self.grad_of(buf, logp) {
                    dl[target] -= g[0];
                }
            }
            &Op::Sum(x) => {
                if let Some(dx) = self.grad_of(buf, x) {
                    for d in dx.iter_mut() {
                        *d += g[0];
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &p in parts {
                    let span = self.shape(p)[*axis] * inner;
                    if let Some(dp) = self.grad_of(buf, p) {
                        let total = node.shape[*axis] * inner;
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + span];
                            kernels::axpy(1.0, src, &mut dp[o * span..(o + 1) * span]);
                        }
                    }
                    offset += span;
                }
            }
            &Op::Slice { x, axis, start } => {
                let (outer, extent, inner) = split_axis(self.shape(x), axis);
                let len = node.shape[axis];
                if let Some(dx) = self.grad_of(buf, x) {
                    for o in 0..outer {
                        let base = o * extent * inner + start * inner;
                        let src = &g[o * len * inner..(o + 1) * len * inner];
                        kernels::axpy(1.0, src, &mut dx[base..base + len * inner]);
                    }
                }
            }
            &Op::Reshape(x) => {
                if let Some(dx) = self.grad_of(buf, x) {
                    kernels::axpy(1.0, g, dx);
                }
            }
            Op::Gather { table, indices } => {
                let dim = self.shape(*table)[1];
                if let Some(dt) = self.grad_of(buf, *table) {
                    for (r, &i) in indices.iter().enumerate() {
                        kernels::axpy(1.0, &g[r * dim..(r + 1) * dim], &mut dt[i * dim..(i + 1) * dim]);
                    }
                }
            }
            &Op::Conv1d {
                seq,
                kernels: kern,
                bias,
                shape,
            } => {
                let n = shape.positions();
                if let Some(db) = self.grad_of(buf, bias) {
                    for (f, d) in db.iter_mut().enumerate() {
                        *d += g[f * n..(f + 1) * n].iter().sum::<f64>();
                    }
                }
                if let Some(dk) = self.grad_of(buf, kern) {
                    kernels::conv1d_grad_kernels(self.value(seq), g, shape, dk);
                }
                if let Some(ds) = self.grad_of(buf, seq) {
                    kernels::conv1d_grad_seq(self.value(kern), g, shape, ds);
                }
            }
            Op::MaxOverTime { x, argmax, width } => {
                if let Some(dx) = self.grad_of(buf, *x) {
                    for (r, &j) in argmax.iter().enumerate() {
                        dx[r * width + j] += g[r];
                    }
                }
            }
        }
    }
}
