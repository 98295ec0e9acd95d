//! Eager tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Parameters live in
//! a [`ParamStore`] that the graph borrows, so building a graph never copies
//! weights. After [`Graph::backward`], gradients of parameter leaves can be
//! collected into a [`GradBuffer`] or written into the store's grad slots.

use super::math::{
    log_softmax_in_place, logsumexp_unchecked, matmul_acc, matmul_at_acc, matmul_bt_acc, sigmoid,
    softmax_in_place,
};
use super::tensor::Tensor;
use crate::error::{usage, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds a buffer of gradients into the tensors' grad slots.
    pub fn accumulate(&mut self, grads: &GradBuffer) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.grads) {
            if let Some(g) = g {
                t.accumulate_grad(g);
            }
        }
    }
}

/// Per-parameter gradient sums, indexed like the owning [`ParamStore`].
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradBuffer {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn add(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Elementwise sum in argument order.
    pub fn merge(&mut self, other: &GradBuffer) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.add(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LogSoftmax(Var),
    Softmax(Var),
    CausalSoftmax(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Sum(Var),
    LogSumExp(Var),
    Gather { table: Var, ids: Vec<usize> },
    SliceRows { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    SegmentMean { x: Var, spans: Vec<(usize, usize)> },
    OuterAdd { a: Var, b: Var },
    KnownGrad { x: Var, grad: Vec<f64> },
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node {
    value: Value,
    op: Op,
    grad: Option<Vec<f64>>,
}

/// Recorded computation. Built eagerly, one per example.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Self {
            params: None,
            nodes: Vec::new(),
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Self {
            params: Some(params),
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.expect("param graph").get(*id),
        }
    }

    /// Gradient accumulated at `v` by [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant or differentiable input, depending on whether its grad is read.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        assert!(self.params.is_some(), "graph has no parameter store");
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        assert!(
            self.value(a).len() == self.value(b).len(),
            "{what}: shape mismatch {sa:?} vs {sb:?}"
        );
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("shape")
    }

    fn unary(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(ta.shape().to_vec(), ta.data().iter().map(|x| f(*x)).collect()).expect("shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let t = self.binary(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let t = self.binary(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let t = self.binary(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.unary(a, |x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    /// `x[n×m] + row[m]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let tx = self.value(x);
        let tr = self.value(row);
        assert_eq!(tx.cols(), tr.len(), "add_row width");
        let mut out = tx.clone();
        let m = tr.len();
        let rd = tr.data().to_vec();
        for chunk in out.data_mut().chunks_mut(m) {
            chunk.iter_mut().zip(&rd).for_each(|(a, b)| *a += b);
        }
        self.push(out, Op::AddRow(x, row))
    }

    /// `x[n×m] ⊙ row[m]` broadcast over rows.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Var {
        let tx = self.value(x);
        let tr = self.value(row);
        assert_eq!(tx.cols(), tr.len(), "mul_row width");
        let mut out = tx.clone();
        let m = tr.len();
        let rd = tr.data().to_vec();
        for chunk in out.data_mut().chunks_mut(m) {
            chunk.iter_mut().zip(&rd).for_each(|(a, b)| *a *= b);
        }
        self.push(out, Op::MulRow(x, row))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = rows_cols(self.value(a));
        let (k2, m) = rows_cols(self.value(b));
        assert_eq!(k, k2, "matmul inner dims {n}x{k} · {k2}x{m}");
        let mut out = vec![0.0; n * m];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        self.push(Tensor::matrix(n, m, out).expect("shape"), Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (n, k) = rows_cols(self.value(a));
        let (m, k2) = rows_cols(self.value(b));
        assert_eq!(k, k2, "matmul_bt inner dims");
        let mut out = vec![0.0; n * m];
        matmul_bt_acc(self.value(a).data(), self.value(b).data(), &mut out, n, k, m);
        self.push(Tensor::matrix(n, m, out).expect("shape"), Op::MatMulBt(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| x.max(0.0));
        self.push(t, Op::Relu(a))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        let c = t.cols();
        t.data_mut().chunks_mut(c).for_each(log_softmax_in_place);
        self.push(t, Op::LogSoftmax(a))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        let c = t.cols();
        t.data_mut().chunks_mut(c).for_each(softmax_in_place);
        self.push(t, Op::Softmax(a))
    }

    /// Row-wise softmax where row `i` only sees columns `0..=i`.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        let c = t.cols();
        for (i, row) in t.data_mut().chunks_mut(c).enumerate() {
            let keep = (i + 1).min(c);
            softmax_in_place(&mut row[..keep]);
            row[keep..].iter_mut().for_each(|v| *v = 0.0);
        }
        self.push(t, Op::CausalSoftmax(a))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        const EPS: f64 = 1e-5;
        let mut t = self.value(x).clone();
        let c = t.cols();
        let mut inv_std = Vec::with_capacity(t.rows());
        for row in t.data_mut().chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
            inv_std.push(is);
        }
        self.push(t, Op::LayerNorm { x, inv_std })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn logsumexp(&mut self, a: Var) -> Var {
        let s = logsumexp_unchecked(self.value(a).data());
        self.push(Tensor::scalar(s), Op::LogSumExp(a))
    }

    /// Embedding lookup: rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (rows, cols) = rows_cols(tt);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(usage(format!("row id {i} outside table of {rows} rows")));
            }
            data.extend_from_slice(tt.row(i));
        }
        let t = Tensor::matrix(ids.len(), cols, data)?;
        Ok(self.push(
            t,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Var {
        let t = self.value(x).slice_rows(start, end);
        self.push(t, Op::SliceRows { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows width");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let t = Tensor::matrix(rows, cols, data).expect("shape");
        self.push(t, Op::ConcatRows(parts.to_vec()))
    }

    /// One output row per inclusive span `(start, end)`: the mean of those rows.
    pub fn segment_mean(&mut self, x: Var, spans: &[(usize, usize)]) -> Var {
        let tx = self.value(x);
        let c = tx.cols();
        let mut data = vec![0.0; spans.len() * c];
        for (o, &(s, e)) in spans.iter().enumerate() {
            let out = &mut data[o * c..(o + 1) * c];
            for r in s..=e {
                out.iter_mut().zip(tx.row(r)).for_each(|(a, b)| *a += b);
            }
            let n = (e - s + 1) as f64;
            out.iter_mut().for_each(|v| *v /= n);
        }
        let t = Tensor::matrix(spans.len(), c, data).expect("shape");
        self.push(
            t,
            Op::SegmentMean {
                x,
                spans: spans.to_vec(),
            },
        )
    }

    /// Pairwise row sums: row `t·U + u` is `a[t] + b[u]`.
    pub fn outer_add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (n, h) = rows_cols(ta);
        let (m, h2) = rows_cols(tb);
        assert_eq!(h, h2, "outer_add width");
        let mut data = Vec::with_capacity(n * m * h);
        for i in 0..n {
            let ra = ta.row(i);
            for j in 0..m {
                data.extend(ra.iter().zip(tb.row(j)).map(|(x, y)| x + y));
            }
        }
        let t = Tensor::matrix(n * m, h, data).expect("shape");
        self.push(t, Op::OuterAdd { a, b })
    }

    /// Scalar node with a precomputed gradient with respect to `x`.
    pub fn known_grad(&mut self, x: Var, value: f64, grad: Vec<f64>) -> Var {
        assert_eq!(grad.len(), self.value(x).len(), "known_grad size");
        self.push(Tensor::scalar(value), Op::KnownGrad { x, grad })
    }

    /// Backpropagates from the scalar `root`, accumulating into every node's
    /// grad slot. Repeated calls accumulate.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.value(root).is_scalar() {
            return Err(Error::Usage(format!(
                "backward from non-scalar node of shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut pass: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        pass[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = pass[i].take() else {
                continue;
            };
            for (v, c) in self.backprop_node(i, &g) {
                match &mut pass[v.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(c),
                }
            }
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let out = Var(i);
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|x| -x).collect())],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                let gb = g.iter().zip(va).map(|(g, x)| g * x).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, s) => vec![(*a, g.iter().map(|x| x * s).collect())],
            Op::AddRow(x, row) => {
                let m = self.value(*row).len();
                let mut gr = vec![0.0; m];
                for chunk in g.chunks(m) {
                    gr.iter_mut().zip(chunk).for_each(|(a, b)| *a += b);
                }
                vec![(*x, g.to_vec()), (*row, gr)]
            }
            Op::MulRow(x, row) => {
                let vr = self.value(*row).data();
                let vx = self.value(*x).data();
                let m = vr.len();
                let mut gr = vec![0.0; m];
                let mut gx = vec![0.0; g.len()];
                for (r, chunk) in g.chunks(m).enumerate() {
                    for j in 0..m {
                        gx[r * m + j] = chunk[j] * vr[j];
                        gr[j] += chunk[j] * vx[r * m + j];
                    }
                }
                vec![(*x, gx), (*row, gr)]
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k) = rows_cols(ta);
                let m = tb.cols();
                let mut ga = vec![0.0; n * k];
                matmul_bt_acc(g, tb.data(), &mut ga, n, m, k);
                let mut gb = vec![0.0; k * m];
                matmul_at_acc(ta.data(), g, &mut gb, n, k, m);
                vec![(*a, ga), (*b, gb)]
            }
            Op::MatMulBt(a, b) => {
                // C = A Bᵀ ; dA = G B ; dB = Gᵀ A
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (n, k) = rows_cols(ta);
                let m = tb.rows();
                let mut ga = vec![0.0; n * k];
                matmul_acc(g, tb.data(), &mut ga, n, m, k);
                let mut gb = vec![0.0; m * k];
                matmul_at_acc(g, ta.data(), &mut gb, n, m, k);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Tanh(a) => {
                let y = self.value(out).data();
                vec![(*a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect())]
            }
            Op::Sigmoid(a) => {
                let y = self.value(out).data();
                vec![(*a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())]
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                vec![(
                    *a,
                    g.iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect(),
                )]
            }
            Op::LogSoftmax(a) => {
                let y = self.value(out);
                let c = y.cols();
                let mut ga = vec![0.0; g.len()];
                for (r, (gr, yr)) in g.chunks(c).zip(y.data().chunks(c)).enumerate() {
                    let s: f64 = gr.iter().sum();
                    for j in 0..c {
                        ga[r * c + j] = gr[j] - yr[j].exp() * s;
                    }
                }
                vec![(*a, ga)]
            }
            Op::Softmax(a) | Op::CausalSoftmax(a) => {
                let y = self.value(out);
                let c = y.cols();
                let mut ga = vec![0.0; g.len()];
                for (r, (gr, yr)) in g.chunks(c).zip(y.data().chunks(c)).enumerate() {
                    let s: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        ga[r * c + j] = yr[j] * (gr[j] - s);
                    }
                }
                vec![(*a, ga)]
            }
            Op::LayerNorm { x, inv_std } => {
                let y = self.value(out);
                let c = y.cols();
                let mut gx = vec![0.0; g.len()];
                for (r, (gr, yr)) in g.chunks(c).zip(y.data().chunks(c)).enumerate() {
                    let mean_g = gr.iter().sum::<f64>() / c as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        gx[r * c + j] = inv_std[r] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                vec![(*x, gx)]
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                vec![(*a, vec![g[0]; n])]
            }
            Op::LogSumExp(a) => {
                let x = self.value(*a).data();
                let lse = self.value(out).item();
                vec![(*a, x.iter().map(|v| g[0] * (v - lse).exp()).collect())]
            }
            Op::Gather { table, ids } => {
                let tt = self.value(*table);
                let c = tt.cols();
                let mut gt = vec![0.0; tt.len()];
                for (r, &id) in ids.iter().enumerate() {
                    gt[id * c..(id + 1) * c]
                        .iter_mut()
                        .zip(&g[r * c..(r + 1) * c])
                        .for_each(|(a, b)| *a += b);
                }
                vec![(*table, gt)]
            }
            Op::SliceRows { x, start } => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut gx = vec![0.0; tx.len()];
                gx[start * c..start * c + g.len()].copy_from_slice(g);
                vec![(*x, gx)]
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut v = Vec::with_capacity(parts.len());
                for &p in parts {
                    let n = self.value(p).len();
                    v.push((p, g[offset..offset + n].to_vec()));
                    offset += n;
                }
                v
            }
            Op::SegmentMean { x, spans } => {
                let tx = self.value(*x);
                let c = tx.cols();
                let mut gx = vec![0.0; tx.len()];
                for (o, &(s, e)) in spans.iter().enumerate() {
                    let n = (e - s + 1) as f64;
                    for r in s..=e {
                        for j in 0..c {
                            gx[r * c + j] += g[o * c + j] / n;
                        }
                    }
                }
                vec![(*x, gx)]
            }
            Op::OuterAdd { a, b } => {
                let (n, h) = rows_cols(self.value(*a));
                let m = self.value(*b).rows();
                let mut ga = vec![0.0; n * h];
                let mut gb = vec![0.0; m * h];
                for i in 0..n {
                    for j in 0..m {
                        let row = &g[(i * m + j) * h..(i * m + j + 1) * h];
                        for d in 0..h {
                            ga[i * h + d] += row[d];
                            gb[j * h + d] += row[d];
                        }
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::KnownGrad { x, grad } => vec![(*x, grad.iter().map(|v| v * g[0]).collect())],
        }
    }

    /// Gradients of every parameter leaf, summed per parameter.
    pub fn param_grads(&self, num_params: usize) -> GradBuffer {
        let mut buf = GradBuffer::new(num_params);
        for node in &self.nodes {
            if let (Op::Param(id), Some(g)) = (&node.op, &node.grad) {
                buf.add(*id, g);
            }
        }
        buf
    }

    /// Writes parameter-leaf gradients into the store's grad slots.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        let buf = self.param_grads(store.len());
        store.accumulate(&buf);
    }
}
