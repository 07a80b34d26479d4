//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! Every forward op appends one node holding its value. Nodes are created
//! in topological order, so the reverse sweep is a single pass from the loss
//! node down to index 0. Constants never receive gradients and parameters of
//! a frozen model can be passed as constants to skip their gradient work.

use super::tensor::{matmul_nt_raw, matmul_raw, matmul_tn_acc, Tensor};
use crate::error::{invalid, shape_err, Result};

/// Epsilon inside the RMS normalizer.
pub const RMS_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Mean(NodeId, Axis),
    Softmax(NodeId),
    CausalSoftmax(NodeId),
    RmsNorm(NodeId),
    Silu(NodeId),
    Sigmoid(NodeId),
    Embedding { table: NodeId, ids: Vec<usize> },
    SliceCols { src: NodeId, start: usize },
    SliceRows { src: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    Mse(NodeId, NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<(usize, usize)> },
    DiagScan { input: NodeId, decay: NodeId },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::MatMul(..) => "matmul",
            Op::MatMulNt(..) => "matmul_nt",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Mul(..) => "mul",
            Op::MulRow(..) => "mul_row",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Mean(..) => "mean",
            Op::Softmax(_) => "softmax",
            Op::CausalSoftmax(_) => "causal_softmax",
            Op::RmsNorm(_) => "rms_norm",
            Op::Silu(_) => "silu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Embedding { .. } => "embedding",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::Mse(..) => "mse",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::DiagScan { .. } => "diag_scan",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for one forward/backward round trip.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    flops: u64,
}

/// Per-node gradients produced by [`Tape::backward`].
///
/// Missing entries mean the gradient is identically zero (the node does not
/// influence the loss, or is a constant).
#[derive(Debug, Clone)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, materialising zeros for absent entries.
    pub fn get_or_zeros(&self, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => {
                let shape = self.shapes[id.0].clone();
                let n = shape.iter().product();
                Tensor::from_parts(shape, vec![0.0; n])
            }
        }
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

    /// Approximate multiply-add count of all recorded forward ops.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.name()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId], cost: usize) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.flops += cost as u64;
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn dims(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[id.0]
            .value
            .dims2()
            .map_err(|_| shape_err(op, format!("operand {} is not rank 2", id.0)))
    }

    fn same_shape(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let da = self.dims(a, op)?;
        let db = self.dims(b, op)?;
        if da != db {
            return Err(shape_err(op, format!("{da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.dims(a, "matmul")?;
        let (k2, m) = self.dims(b, "matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("({n},{k}) @ ({k2},{m})")));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::MatMul(a, b), &[a, b], n * k * m))
    }

    /// `a @ b^T`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, k) = self.dims(a, "matmul_nt")?;
        let (m, k2) = self.dims(b, "matmul_nt")?;
        if k != k2 {
            return Err(shape_err("matmul_nt", format!("({n},{k}) @ ({m},{k2})^T")));
        }
        let out = matmul_nt_raw(self.value(a).data(), self.value(b).data(), n, k, m);
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::MatMulNt(a, b), &[a, b], n * k * m))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = src[i * m + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Transpose(a), &[a], n * m))
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<NodeId> {
        let name = op.name();
        let (n, m) = self.same_shape(a, b, name)?;
        let out = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(Tensor::from_parts(vec![n, m], out), op, &[a, b], n * m))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn broadcast_row(
        &mut self,
        a: NodeId,
        row: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let name = op.name();
        let (n, m) = self.dims(a, name)?;
        let (r, c) = self.dims(row, name)?;
        if r != 1 || c != m {
            return Err(shape_err(name, format!("row ({r},{c}) against ({n},{m})")));
        }
        let rv = self.value(row).data();
        let out = self
            .value(a)
            .data()
            .chunks(m)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(&x, &y)| f(x, y)))
            .collect();
        Ok(self.push(Tensor::from_parts(vec![n, m], out), op, &[a, row], n * m))
    }

    /// Adds a `(1, m)` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.broadcast_row(a, row, Op::AddRow(a, row), |x, y| x + y)
    }

    /// Multiplies every row of `a` elementwise by a `(1, m)` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        self.broadcast_row(a, row, Op::MulRow(a, row), |x, y| x * y)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> Result<NodeId> {
        if !s.is_finite() {
            return Err(invalid("scale factor must be finite"));
        }
        let v = self.value(a).scale(s);
        let n = v.len();
        Ok(self.push(v, Op::Scale(a, s), &[a], n))
    }

    /// Sum of all entries as a `(1,1)` scalar.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a);
        let n = v.len();
        let s = v.sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), &[a], n))
    }

    /// Mean over an axis: `Rows` collapses rows to `(1, m)`, `Cols` to `(n, 1)`.
    pub fn mean(&mut self, a: NodeId, axis: Axis) -> Result<NodeId> {
        let (n, m) = self.dims(a, "mean")?;
        if n == 0 || m == 0 {
            return Err(shape_err("mean", "empty operand"));
        }
        let src = self.value(a).data();
        let out = match axis {
            Axis::Rows => {
                let mut acc = vec![0.0; m];
                for row in src.chunks(m) {
                    for (o, v) in acc.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                let inv = 1.0 / n as f64;
                Tensor::from_parts(vec![1, m], acc.into_iter().map(|v| v * inv).collect())
            }
            Axis::Cols => {
                let vals = src.chunks(m).map(|row| row.iter().sum::<f64>() / m as f64).collect();
                Tensor::from_parts(vec![n, 1], vals)
            }
        };
        Ok(self.push(out, Op::Mean(a, axis), &[a], n * m))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims(a, "softmax")?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(m) {
            softmax_in_place(row);
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Softmax(a), &[a], 3 * n * m))
    }

    /// Row-wise softmax where row `i` only attends to columns `0..=i`;
    /// masked entries are exactly zero.
    pub fn causal_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims(a, "causal_softmax")?;
        if n != m {
            return Err(shape_err("causal_softmax", format!("needs square scores, got ({n},{m})")));
        }
        let mut out = self.value(a).to_vec();
        for (i, row) in out.chunks_mut(m).enumerate() {
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::CausalSoftmax(a), &[a], 3 * n * m / 2))
    }

    /// Row-wise `x / sqrt(mean(x^2) + eps)`.
    pub fn rms_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let (n, m) = self.dims(a, "rms_norm")?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(m) {
            let inv = 1.0 / rms(row);
            row.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::RmsNorm(a), &[a], 3 * n * m))
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let n = v.len();
        Ok(self.push(v, Op::Silu(a), &[a], 4 * n))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(sigmoid);
        let n = v.len();
        Ok(self.push(v, Op::Sigmoid(a), &[a], 3 * n))
    }

    /// Gathers rows of `table` (vocab, H) by id into a `(ids.len(), H)` tensor.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (vocab, h) = self.dims(table, "embedding")?;
        if let Some(bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(invalid(format!("token id {bad} out of range for vocabulary {vocab}")));
        }
        let src = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * h);
        for &i in ids {
            out.extend_from_slice(src.row(i));
        }
        let value = Tensor::from_parts(vec![ids.len(), h], out);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
            ids.len() * h,
        ))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (n, m) = self.dims(a, "slice_cols")?;
        if start + len > m {
            return Err(shape_err("slice_cols", format!("{start}+{len} > {m}")));
        }
        let src = self.value(a).data();
        let out = src.chunks(m).flat_map(|row| row[start..start + len].iter().copied()).collect();
        Ok(self.push(
            Tensor::from_parts(vec![n, len], out),
            Op::SliceCols { src: a, start },
            &[a],
            n * len,
        ))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (n, m) = self.dims(a, "slice_rows")?;
        if start + len > n || len == 0 {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {n}", start + len)));
        }
        let out = self.value(a).data()[start * m..(start + len) * m].to_vec();
        Ok(self.push(
            Tensor::from_parts(vec![len, m], out),
            Op::SliceRows { src: a, start },
            &[a],
            len * m,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(shape_err("concat_cols", "no operands"));
        }
        let n = self.dims(parts[0], "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims(p, "concat_cols")?;
            if r != n {
                return Err(shape_err("concat_cols", format!("row counts {n} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, total], out),
            Op::ConcatCols(parts.to_vec()),
            parts,
            n * total,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(shape_err("concat_rows", "no operands"));
        }
        let m = self.dims(parts[0], "concat_rows")?.1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let (r, c) = self.dims(p, "concat_rows")?;
            if c != m {
                return Err(shape_err("concat_rows", format!("column counts {m} vs {c}")));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(
            Tensor::from_parts(vec![rows, m], out),
            Op::ConcatRows(parts.to_vec()),
            parts,
            rows * m,
        ))
    }

    /// Mean squared error between equally shaped tensors.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (n, m) = self.same_shape(a, b, "mse")?;
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let v = total / (n * m) as f64;
        Ok(self.push(Tensor::scalar(v), Op::Mse(a, b), &[a, b], 2 * n * m))
    }

    /// Mean cross-entropy of `logits` rows against `(row, class)` targets.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[(usize, usize)]) -> Result<NodeId> {
        let (n, m) = self.dims(logits, "cross_entropy")?;
        if targets.is_empty() {
            return Err(invalid("cross_entropy needs at least one target"));
        }
        let src = self.value(logits);
        let mut total = 0.0;
        for &(r, c) in targets {
            if r >= n || c >= m {
                return Err(shape_err("cross_entropy", format!("target ({r},{c}) outside ({n},{m})")));
            }
            let row = src.row(r);
            total += log_sum_exp(row) - row[c];
        }
        let v = total / targets.len() as f64;
        Ok(self.push(
            Tensor::scalar(v),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
            3 * targets.len() * m,
        ))
    }

    /// Diagonal linear recurrence `h_t = decay ⊙ h_{t-1} + x_t`, `h_{-1} = 0`.
    pub fn diag_scan(&mut self, input: NodeId, decay: NodeId) -> Result<NodeId> {
        let (t, h) = self.dims(input, "diag_scan")?;
        let (r, c) = self.dims(decay, "diag_scan")?;
        if r != 1 || c != h {
            return Err(shape_err("diag_scan", format!("decay ({r},{c}) for width {h}")));
        }
        let x = self.value(input).data();
        let a = self.value(decay).data();
        let mut out = vec![0.0; t * h];
        for step in 0..t {
            for j in 0..h {
                let prev = if step == 0 { 0.0 } else { out[(step - 1) * h + j] };
                out[step * h + j] = a[j] * prev + x[step * h + j];
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![t, h], out),
            Op::DiagScan { input, decay },
            &[input, decay],
            2 * t * h,
        ))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(invalid(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
            .collect();
        Ok(GradientMap { grads, shapes })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Constant => {}
            &Op::MatMul(a, b) => {
                let (n, k) = self.value(a).dims2().unwrap();
                let m = self.value(b).cols();
                if self.wants(a) {
                    let ga = matmul_nt_raw(g, self.value(b).data(), n, m, k);
                    accumulate(grads, a, &ga);
                }
                if self.wants(b) {
                    let buf = slot(grads, b, k * m);
                    matmul_tn_acc(self.value(a).data(), g, n, k, m, buf);
                }
            }
            &Op::MatMulNt(a, b) => {
                // out (n,m) = a (n,k) b(m,k)^T
                let (n, k) = self.value(a).dims2().unwrap();
                let m = self.value(b).rows();
                if self.wants(a) {
                    let ga = matmul_raw(g, self.value(b).data(), n, m, k);
                    accumulate(grads, a, &ga);
                }
                if self.wants(b) {
                    let buf = slot(grads, b, m * k);
                    matmul_tn_acc(g, self.value(a).data(), n, m, k, buf);
                }
            }
            &Op::Transpose(a) => {
                let (n, m) = self.value(a).dims2().unwrap();
                let buf = slot(grads, a, n * m);
                for i in 0..n {
                    for j in 0..m {
                        buf[i * m + j] += g[j * n + i];
                    }
                }
            }
            &Op::Add(a, b) => {
                if self.wants(a) {
                    accumulate(grads, a, g);
                }
                if self.wants(b) {
                    accumulate(grads, b, g);
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    accumulate(grads, a, g);
                }
                if self.wants(b) {
                    let buf = slot(grads, b, g.len());
                    buf.iter_mut().zip(g).for_each(|(o, v)| *o -= v);
                }
            }
            &Op::AddRow(a, row) => {
                if self.wants(a) {
                    accumulate(grads, a, g);
                }
                if self.wants(row) {
                    let m = out.cols();
                    let buf = slot(grads, row, m);
                    for chunk in g.chunks(m) {
                        buf.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
                    }
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    let buf = slot(grads, a, g.len());
                    for ((o, gv), bv) in buf.iter_mut().zip(g).zip(self.value(b).data()) {
                        *o += gv * bv;
                    }
                }
                if self.wants(b) {
                    let buf = slot(grads, b, g.len());
                    for ((o, gv), av) in buf.iter_mut().zip(g).zip(self.value(a).data()) {
                        *o += gv * av;
                    }
                }
            }
            &Op::MulRow(a, row) => {
                let m = out.cols();
                let rv = self.value(row).data();
                if self.wants(a) {
                    let buf = slot(grads, a, g.len());
                    for (bchunk, gchunk) in buf.chunks_mut(m).zip(g.chunks(m)) {
                        for ((o, gv), r) in bchunk.iter_mut().zip(gchunk).zip(rv) {
                            *o += gv * r;
                        }
                    }
                }
                if self.wants(row) {
                    let av = self.value(a).data();
                    let buf = slot(grads, row, m);
                    for (gchunk, achunk) in g.chunks(m).zip(av.chunks(m)) {
                        for ((o, gv), x) in buf.iter_mut().zip(gchunk).zip(achunk) {
                            *o += gv * x;
                        }
                    }
                }
            }
            &Op::Scale(a, s) => {
                let buf = slot(grads, a, g.len());
                buf.iter_mut().zip(g).for_each(|(o, v)| *o += s * v);
            }
            &Op::Sum(a) => {
                let n = self.value(a).len();
                let buf = slot(grads, a, n);
                buf.iter_mut().for_each(|o| *o += g[0]);
            }
            &Op::Mean(a, axis) => {
                let (n, m) = self.value(a).dims2().unwrap();
                let buf = slot(grads, a, n * m);
                match axis {
                    Axis::Rows => {
                        let inv = 1.0 / n as f64;
                        for chunk in buf.chunks_mut(m) {
                            chunk.iter_mut().zip(g).for_each(|(o, v)| *o += v * inv);
                        }
                    }
                    Axis::Cols => {
                        let inv = 1.0 / m as f64;
                        for (chunk, gv) in buf.chunks_mut(m).zip(g) {
                            chunk.iter_mut().for_each(|o| *o += gv * inv);
                        }
                    }
                }
            }
            &Op::Softmax(a) | &Op::CausalSoftmax(a) => {
                let m = out.cols();
                let buf = slot(grads, a, g.len());
                for ((bchunk, gchunk), ychunk) in buf.chunks_mut(m).zip(g.chunks(m)).zip(out.data().chunks(m)) {
                    let dot: f64 = gchunk.iter().zip(ychunk).map(|(x, y)| x * y).sum();
                    for ((o, gv), y) in bchunk.iter_mut().zip(gchunk).zip(ychunk) {
                        *o += y * (gv - dot);
                    }
                }
            }
            &Op::RmsNorm(a) => {
                let m = out.cols();
                let x = self.value(a).data();
                let buf = slot(grads, a, g.len());
                for (((bchunk, gchunk), ychunk), xchunk) in buf
                    .chunks_mut(m)
                    .zip(g.chunks(m))
                    .zip(out.data().chunks(m))
                    .zip(x.chunks(m))
                {
                    let r = rms(xchunk);
                    let dot: f64 = gchunk.iter().zip(ychunk).map(|(p, q)| p * q).sum::<f64>() / m as f64;
                    for ((o, gv), y) in bchunk.iter_mut().zip(gchunk).zip(ychunk) {
                        *o += (gv - y * dot) / r;
                    }
                }
            }
            &Op::Silu(a) => {
                let x = self.value(a).data();
                let buf = slot(grads, a, g.len());
                for ((o, gv), &xv) in buf.iter_mut().zip(g).zip(x) {
                    let s = sigmoid(xv);
                    *o += gv * s * (1.0 + xv * (1.0 - s));
                }
            }
            &Op::Sigmoid(a) => {
                let buf = slot(grads, a, g.len());
                for ((o, gv), y) in buf.iter_mut().zip(g).zip(out.data()) {
                    *o += gv * y * (1.0 - y);
                }
            }
            Op::Embedding { table, ids } => {
                let (vocab, h) = self.value(*table).dims2().unwrap();
                let buf = slot(grads, *table, vocab * h);
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut buf[id * h..(id + 1) * h];
                    dst.iter_mut().zip(&g[r * h..(r + 1) * h]).for_each(|(o, v)| *o += v);
                }
            }
            &Op::SliceCols { src, start } => {
                let (n, m) = self.value(src).dims2().unwrap();
                let len = out.cols();
                let buf = slot(grads, src, n * m);
                for i in 0..n {
                    let dst = &mut buf[i * m + start..i * m + start + len];
                    dst.iter_mut().zip(&g[i * len..(i + 1) * len]).for_each(|(o, v)| *o += v);
                }
            }
            &Op::SliceRows { src, start } => {
                let (n, m) = self.value(src).dims2().unwrap();
                let buf = slot(grads, src, n * m);
                let dst = &mut buf[start * m..start * m + g.len()];
                dst.iter_mut().zip(g).for_each(|(o, v)| *o += v);
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let n = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        let buf = slot(grads, p, n * w);
                        for i in 0..n {
                            let srcg = &g[i * total + offset..i * total + offset + w];
                            buf[i * w..(i + 1) * w].iter_mut().zip(srcg).for_each(|(o, v)| *o += v);
                        }
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    if self.wants(p) {
                        accumulate(grads, p, &g[offset..offset + len]);
                    }
                    offset += len;
                }
            }
            &Op::Mse(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let c = 2.0 * g[0] / av.len() as f64;
                if self.wants(a) {
                    let buf = slot(grads, a, av.len());
                    for ((o, x), y) in buf.iter_mut().zip(av).zip(bv) {
                        *o += c * (x - y);
                    }
                }
                if self.wants(b) {
                    let buf = slot(grads, b, bv.len());
                    for ((o, x), y) in buf.iter_mut().zip(av).zip(bv) {
                        *o -= c * (x - y);
                    }
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let src = self.value(*logits);
                let m = src.cols();
                let scale = g[0] / targets.len() as f64;
                let buf = slot(grads, *logits, src.len());
                for &(r, c) in targets {
                    let row = src.row(r);
                    let lse = log_sum_exp(row);
                    let dst = &mut buf[r * m..(r + 1) * m];
                    for (o, &v) in dst.iter_mut().zip(row) {
                        *o += scale * (v - lse).exp();
                    }
                    dst[c] -= scale;
                }
            }
            &Op::DiagScan { input, decay } => {
                let (t, h) = out.dims2().unwrap();
                let a = self.value(decay).data();
                let hs = out.data();
                // carried[j] accumulates dL/dh_t including contributions from later steps
                let mut carried = vec![0.0; h];
                let mut gin = vec![0.0; t * h];
                let mut gdecay = vec![0.0; h];
                for step in (0..t).rev() {
                    for j in 0..h {
                        let total = g[step * h + j] + carried[j];
                        gin[step * h + j] = total;
                        if step > 0 {
                            gdecay[j] += total * hs[(step - 1) * h + j];
                        }
                        carried[j] = a[j] * total;
                    }
                }
                if self.wants(input) {
                    accumulate(grads, input, &gin);
                }
                if self.wants(decay) {
                    accumulate(grads, decay, &gdecay);
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    match &mut grads[id.0] {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(o, v)| *o += v),
        slot @ None => *slot = Some(g.to_vec()),
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

fn rms(row: &[f64]) -> f64 {
    (row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64 + RMS_EPS).sqrt()
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}
