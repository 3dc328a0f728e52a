//! Reverse-mode differentiation over 2-D tensors.
//!
//! A [`Tape`] records each operation during the forward pass (define-by-run)
//! and replays the local backward rules in reverse construction order. The
//! tape owns every intermediate value; callers keep [`ValueId`] handles.

use crate::autodiff::kernels;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// c = a * b
    MatMul { a: ValueId, b: ValueId },
    /// c = a * b^T
    MatMulNt { a: ValueId, b: ValueId },
    /// c = x * w + bias (bias broadcast over rows)
    Affine {
        x: ValueId,
        w: ValueId,
        bias: ValueId,
    },
    Add { a: ValueId, b: ValueId },
    MulElem { a: ValueId, b: ValueId },
    Scale { x: ValueId, factor: f64 },
    Sigmoid { x: ValueId },
    LeakyRelu { x: ValueId, alpha: f64 },
    SoftmaxRows { x: ValueId },
    /// Row j of the output is row `parts[j].1` of tensor `parts[j].0`.
    GatherRows { parts: Vec<(ValueId, usize)> },
    Flatten { x: ValueId },
    ConcatCols { parts: Vec<ValueId> },
    Sum { x: ValueId },
    /// Mean over rows of -log softmax(logits)[label]; softmax saved at forward.
    CrossEntropy {
        logits: ValueId,
        labels: Vec<usize>,
        softmax: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode computation record. Nodes are topologically ordered by
/// construction; backward visits each node exactly once in reverse order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input value. Its `requires_grad` flag decides whether
    /// `backward` populates a gradient for it.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Leaf)
    }

    /// Convenience: record a borrowed tensor as a gradient-carrying leaf.
    pub fn param(&mut self, value: &Tensor) -> ValueId {
        let mut t = value.clone();
        t.requires_grad = true;
        t.grad = None;
        self.push(t, Op::Leaf)
    }

    /// Convenience: record a borrowed tensor as a constant leaf.
    pub fn constant(&mut self, value: &Tensor) -> ValueId {
        let mut t = value.clone();
        t.requires_grad = false;
        t.grad = None;
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of a node after `backward`, if one was produced.
    pub fn grad(&self, id: ValueId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad.as_deref()
    }

    fn push(&mut self, value: Tensor, op: Op) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    fn push_result(&mut self, mut value: Tensor, requires_grad: bool, op: Op) -> ValueId {
        value.requires_grad = requires_grad;
        self.push(value, op)
    }

    fn requires(&self, id: ValueId) -> bool {
        self.nodes[id.0].value.requires_grad
    }

    fn shape_err(
        op: &'static str,
        left: &Tensor,
        right: &Tensor,
    ) -> Error {
        Error::ShapeMismatch {
            op,
            left_rows: left.rows(),
            left_cols: left.cols(),
            right_rows: right.rows(),
            right_cols: right.cols(),
        }
    }

    // ── forward ops ──────────────────────────────────────────────────

    /// c[m x p] = a[m x n] * b[n x p]
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(Self::shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = kernels::matmul_nn(ta.data(), tb.data(), m, k, n);
        let out = Tensor::new(m, n, data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push_result(out, rg, Op::MatMul { a, b }))
    }

    /// c[m x n] = a[m x k] * b[n x k]^T
    pub fn matmul_nt(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Self::shape_err("matmul_nt", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        let data = kernels::matmul_nt(ta.data(), tb.data(), m, k, n);
        let out = Tensor::new(m, n, data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push_result(out, rg, Op::MatMulNt { a, b }))
    }

    /// c[m x p] = x[m x n] * w[n x p] + bias[1 x p]
    pub fn affine(&mut self, x: ValueId, w: ValueId, bias: ValueId) -> Result<ValueId> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.cols() != tw.rows() {
            return Err(Self::shape_err("affine", tx, tw));
        }
        let tb = self.value(bias);
        if tb.rows() != 1 || tb.cols() != tw.cols() {
            return Err(Self::shape_err("affine bias", tw, tb));
        }
        let (m, k, n) = (tx.rows(), tx.cols(), tw.cols());
        let mut data = kernels::matmul_nn(tx.data(), tw.data(), m, k, n);
        kernels::add_bias_rows(&mut data, tb.data(), n);
        let out = Tensor::new(m, n, data)?;
        let rg = self.requires(x) || self.requires(w) || self.requires(bias);
        Ok(self.push_result(out, rg, Op::Affine { x, w, bias }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err("add", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push_result(out, rg, Op::Add { a, b }))
    }

    pub fn mul_elem(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Self::shape_err("mul_elem", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push_result(out, rg, Op::MulElem { a, b }))
    }

    pub fn scale(&mut self, x: ValueId, factor: f64) -> ValueId {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * factor).collect();
        let out = Tensor::new(tx.rows(), tx.cols(), data).expect("same shape");
        let rg = self.requires(x);
        self.push_result(out, rg, Op::Scale { x, factor })
    }

    /// Elementwise 1 / (1 + exp(-x)), computed branch-stably.
    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let out = Tensor::new(tx.rows(), tx.cols(), data).expect("same shape");
        let rg = self.requires(x);
        self.push_result(out, rg, Op::Sigmoid { x })
    }

    /// Elementwise x for x > 0, alpha * x otherwise (subgradient at 0: alpha).
    pub fn leaky_relu(&mut self, x: ValueId, alpha: f64) -> Result<ValueId> {
        if !(alpha >= 0.0) {
            return Err(Error::InvalidArgument {
                op: "leaky_relu",
                message: format!("alpha must be >= 0, got {alpha}"),
            });
        }
        let tx = self.value(x);
        let data = tx
            .data()
            .iter()
            .map(|&v| if v > 0.0 { v } else { alpha * v })
            .collect();
        let out = Tensor::new(tx.rows(), tx.cols(), data)?;
        let rg = self.requires(x);
        Ok(self.push_result(out, rg, Op::LeakyRelu { x, alpha }))
    }

    /// Per-row softmax with max subtraction; each row sums to 1.
    pub fn softmax_rows(&mut self, x: ValueId) -> ValueId {
        let tx = self.value(x);
        let (m, n) = tx.shape();
        let mut data = vec![0.0; m * n];
        for (out_row, in_row) in data.chunks_mut(n).zip(tx.data().chunks(n)) {
            softmax_row(out_row, in_row);
        }
        let out = Tensor::new(m, n, data).expect("same shape");
        let rg = self.requires(x);
        self.push_result(out, rg, Op::SoftmaxRows { x })
    }

    /// Stack k single-row tensors of equal width into a k x d tensor.
    pub fn stack_rows(&mut self, rows: &[ValueId]) -> Result<ValueId> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument {
                op: "stack_rows",
                message: "need at least one row".into(),
            });
        }
        for &id in rows {
            let t = self.value(id);
            if t.rows() != 1 {
                return Err(Error::InvalidArgument {
                    op: "stack_rows",
                    message: format!("expected 1x{} rows, got {}x{}", t.cols(), t.rows(), t.cols()),
                });
            }
        }
        let parts: Vec<(ValueId, usize)> = rows.iter().map(|&id| (id, 0)).collect();
        self.gather_rows(&parts)
    }

    /// Stack row `index` of each source tensor into a k x d tensor.
    /// Generalizes `stack_rows` to pick one row out of batched sources.
    pub fn gather_rows(&mut self, parts: &[(ValueId, usize)]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "gather_rows",
                message: "need at least one row".into(),
            });
        }
        let width = self.value(parts[0].0).cols();
        let mut data = Vec::with_capacity(parts.len() * width);
        let mut rg = false;
        for &(id, row) in parts {
            let t = self.value(id);
            if t.cols() != width {
                return Err(Error::InvalidArgument {
                    op: "gather_rows",
                    message: format!("row width {} differs from first width {}", t.cols(), width),
                });
            }
            if row >= t.rows() {
                return Err(Error::InvalidArgument {
                    op: "gather_rows",
                    message: format!("row index {} out of range for {} rows", row, t.rows()),
                });
            }
            data.extend_from_slice(t.row(row));
            rg |= t.requires_grad;
        }
        let out = Tensor::new(parts.len(), width, data)?;
        Ok(self.push_result(out, rg, Op::GatherRows { parts: parts.to_vec() }))
    }

    /// Row-major reshape of k x d into 1 x (k*d).
    pub fn flatten(&mut self, x: ValueId) -> ValueId {
        let tx = self.value(x);
        let out = Tensor::new(1, tx.len(), tx.data().to_vec()).expect("same length");
        let rg = self.requires(x);
        self.push_result(out, rg, Op::Flatten { x })
    }

    /// Concatenate tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument {
                op: "concat_cols",
                message: "need at least one part".into(),
            });
        }
        let rows = self.value(parts[0]).rows();
        let mut total_cols = 0;
        let mut rg = false;
        for &id in parts {
            let t = self.value(id);
            if t.rows() != rows {
                return Err(Self::shape_err("concat_cols", self.value(parts[0]), t));
            }
            total_cols += t.cols();
            rg |= t.requires_grad;
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for &id in parts {
                data.extend_from_slice(self.value(id).row(r));
            }
        }
        let out = Tensor::new(rows, total_cols, data)?;
        Ok(self.push_result(out, rg, Op::ConcatCols { parts: parts.to_vec() }))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let total: f64 = self.value(x).data().iter().sum();
        let rg = self.requires(x);
        self.push_result(Tensor::scalar(total), rg, Op::Sum { x })
    }

    /// Scaled dot-product attention over k tokens of width dh.
    ///
    /// weights = softmax_rows(q * k^T / sqrt(dh)), out = weights * v.
    /// Returns (out, weights); gradients flow through both.
    pub fn scaled_dot_attention(
        &mut self,
        q: ValueId,
        k: ValueId,
        v: ValueId,
    ) -> Result<(ValueId, ValueId)> {
        let shape = self.value(q).shape();
        for (&id, name) in [(k, "keys"), (v, "values")].iter().map(|(i, n)| (i, *n)) {
            if self.value(id).shape() != shape {
                return Err(Error::InvalidArgument {
                    op: "scaled_dot_attention",
                    message: format!(
                        "{} shape {:?} differs from queries shape {:?}",
                        name,
                        self.value(id).shape(),
                        shape
                    ),
                });
            }
        }
        let dh = shape.1;
        if dh == 0 {
            return Err(Error::InvalidArgument {
                op: "scaled_dot_attention",
                message: "head width must be >= 1".into(),
            });
        }
        let scores = self.matmul_nt(q, k)?;
        let scaled = self.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = self.softmax_rows(scaled);
        let out = self.matmul(weights, v)?;
        Ok((out, weights))
    }

    /// Mean over rows of -log softmax(logits)[label], via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: ValueId, labels: &[usize]) -> Result<ValueId> {
        let t = self.value(logits);
        let (m, c) = t.shape();
        if labels.len() != m {
            return Err(Error::InvalidArgument {
                op: "cross_entropy",
                message: format!("{} labels for {} logit rows", labels.len(), m),
            });
        }
        let mut softmax = vec![0.0; m * c];
        let mut total = 0.0;
        for (r, (&label, row)) in labels.iter().zip(t.data().chunks(c)).enumerate() {
            if label >= c {
                return Err(Error::InvalidArgument {
                    op: "cross_entropy",
                    message: format!("label {label} out of range for {c} classes (row {r})"),
                });
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for v in row {
                denom += (v - max).exp();
            }
            let lse = max + denom.ln();
            total += lse - row[label];
            for (s, v) in softmax[r * c..(r + 1) * c].iter_mut().zip(row) {
                *s = (v - max).exp() / denom;
            }
        }
        let loss = total / m as f64;
        let rg = self.requires(logits);
        Ok(self.push_result(
            Tensor::scalar(loss),
            rg,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                softmax,
            },
        ))
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Populate `grad` on every grad-requiring tensor reachable from `loss`.
    /// Gradients accumulate additively across fan-out.
    pub fn backward(&mut self, loss: ValueId) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument {
                op: "backward",
                message: format!("loss id {} is not on this tape", loss.0),
            });
        }
        let loss_tensor = &self.nodes[loss.0].value;
        if !loss_tensor.is_scalar() {
            return Err(Error::InvalidArgument {
                op: "backward",
                message: format!(
                    "loss must be a 1x1 scalar, got {}x{}",
                    loss_tensor.rows(),
                    loss_tensor.cols()
                ),
            });
        }

        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].value.requires_grad {
                continue;
            }
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            self.accumulate(i, &upstream, &mut grads);
            grads[i] = Some(upstream);
        }

        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            if node.value.requires_grad {
                node.value.grad = grad;
            }
        }
        Ok(())
    }

    /// Apply the local backward rule of node `i`, adding contributions from
    /// `upstream` into the operand slots of `grads`.
    fn accumulate(&self, i: usize, upstream: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut add_into = |target: ValueId, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[target.0].value.requires_grad {
                return;
            }
            let len = self.nodes[target.0].value.len();
            let buf = grads[target.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };

        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                // c = a*b: da += dc * b^T, db += a^T * dc
                let (m, k) = self.nodes[a.0].value.shape();
                let n = self.nodes[b.0].value.cols();
                add_into(*a, &mut |buf| {
                    kernels::acc_nt(buf, upstream, self.nodes[b.0].value.data(), m, n, k)
                });
                add_into(*b, &mut |buf| {
                    kernels::acc_tn(buf, self.nodes[a.0].value.data(), upstream, m, k, n)
                });
            }
            Op::MatMulNt { a, b } => {
                // c = a*b^T: da += dc * b, db += dc^T * a
                let (m, k) = self.nodes[a.0].value.shape();
                let n = self.nodes[b.0].value.rows();
                add_into(*a, &mut |buf| {
                    kernels::acc_nn(buf, upstream, self.nodes[b.0].value.data(), m, n, k)
                });
                add_into(*b, &mut |buf| {
                    kernels::acc_tn(buf, upstream, self.nodes[a.0].value.data(), m, n, k)
                });
            }
            Op::Affine { x, w, bias } => {
                let (m, k) = self.nodes[x.0].value.shape();
                let n = self.nodes[w.0].value.cols();
                add_into(*x, &mut |buf| {
                    kernels::acc_nt(buf, upstream, self.nodes[w.0].value.data(), m, n, k)
                });
                add_into(*w, &mut |buf| {
                    kernels::acc_tn(buf, self.nodes[x.0].value.data(), upstream, m, k, n)
                });
                add_into(*bias, &mut |buf| kernels::acc_colsum(buf, upstream, n));
            }
            Op::Add { a, b } => {
                add_into(*a, &mut |buf| {
                    for (g, u) in buf.iter_mut().zip(upstream) {
                        *g += u;
                    }
                });
                add_into(*b, &mut |buf| {
                    for (g, u) in buf.iter_mut().zip(upstream) {
                        *g += u;
                    }
                });
            }
            Op::MulElem { a, b } => {
                add_into(*a, &mut |buf| {
                    for ((g, u), v) in buf.iter_mut().zip(upstream).zip(self.nodes[b.0].value.data()) {
                        *g += u * v;
                    }
                });
                add_into(*b, &mut |buf| {
                    for ((g, u), v) in buf.iter_mut().zip(upstream).zip(self.nodes[a.0].value.data()) {
                        *g += u * v;
                    }
                });
            }
            Op::Scale { x, factor } => {
                add_into(*x, &mut |buf| {
                    for (g, u) in buf.iter_mut().zip(upstream) {
                        *g += factor * u;
                    }
                });
            }
            Op::Sigmoid { x } => {
                let s = self.nodes[i].value.data();
                add_into(*x, &mut |buf| {
                    for ((g, u), y) in buf.iter_mut().zip(upstream).zip(s) {
                        *g += u * y * (1.0 - y);
                    }
                });
            }
            Op::LeakyRelu { x, alpha } => {
                let input = self.nodes[x.0].value.data();
                add_into(*x, &mut |buf| {
                    for ((g, u), v) in buf.iter_mut().zip(upstream).zip(input) {
                        *g += u * if *v > 0.0 { 1.0 } else { *alpha };
                    }
                });
            }
            Op::SoftmaxRows { x } => {
                let y = self.nodes[i].value.data();
                let n = self.nodes[i].value.cols();
                add_into(*x, &mut |buf| {
                    for ((g_row, u_row), y_row) in
                        buf.chunks_mut(n).zip(upstream.chunks(n)).zip(y.chunks(n))
                    {
                        let inner: f64 = u_row.iter().zip(y_row).map(|(u, s)| u * s).sum();
                        for ((g, u), s) in g_row.iter_mut().zip(u_row).zip(y_row) {
                            *g += s * (u - inner);
                        }
                    }
                });
            }
            Op::GatherRows { parts } => {
                let width = self.nodes[i].value.cols();
                for (j, &(src, row)) in parts.iter().enumerate() {
                    let cols = self.nodes[src.0].value.cols();
                    add_into(src, &mut |buf| {
                        let dst = &mut buf[row * cols..(row + 1) * cols];
                        for (g, u) in dst.iter_mut().zip(&upstream[j * width..(j + 1) * width]) {
                            *g += u;
                        }
                    });
                }
            }
            Op::Flatten { x } => {
                add_into(*x, &mut |buf| {
                    for (g, u) in buf.iter_mut().zip(upstream) {
                        *g += u;
                    }
                });
            }
            Op::ConcatCols { parts } => {
                let rows = self.nodes[i].value.rows();
                let total = self.nodes[i].value.cols();
                let mut offset = 0;
                for &part in parts {
                    let cols = self.nodes[part.0].value.cols();
                    add_into(part, &mut |buf| {
                        for r in 0..rows {
                            let src = &upstream[r * total + offset..r * total + offset + cols];
                            for (g, u) in buf[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                                *g += u;
                            }
                        }
                    });
                    offset += cols;
                }
            }
            Op::Sum { x } => {
                let u = upstream[0];
                add_into(*x, &mut |buf| {
                    for g in buf.iter_mut() {
                        *g += u;
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                softmax,
            } => {
                let m = labels.len();
                let c = self.nodes[logits.0].value.cols();
                let u = upstream[0] / m as f64;
                add_into(*logits, &mut |buf| {
                    for (r, &label) in labels.iter().enumerate() {
                        let row = &softmax[r * c..(r + 1) * c];
                        let g_row = &mut buf[r * c..(r + 1) * c];
                        for (j, (g, s)) in g_row.iter_mut().zip(row).enumerate() {
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            *g += u * (s - onehot);
                        }
                    }
                });
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(out: &mut [f64], row: &[f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for (o, v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        denom += *o;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}
