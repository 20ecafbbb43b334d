//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and backward is a single reverse sweep. Parameters are
//! borrowed, not copied, for the lifetime of the tape.

use std::borrow::Cow;
use std::sync::Arc;

use crate::error::{Result, TfnError};
use crate::tensor::{gemm, Tensor};

/// Clamp applied inside every logarithm of a loss.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x · wᵀ` with `x: [B, in]`, `w: [out, in]`.
    MatMulT { x: NodeId, w: NodeId },
    AddBias { x: NodeId, b: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, scale: f64 },
    ConcatCols(Vec<NodeId>),
    SliceCols { x: NodeId, start: usize },
    AugmentOne(NodeId),
    Outer3(NodeId, NodeId, NodeId),
    Gather { x: NodeId, indices: Arc<[usize]> },
    Softmax(NodeId),
    Sum(NodeId),
    SumSquares(NodeId),
    BceMean { p: NodeId, targets: Vec<f64> },
    CrossEntropyMean { probs: NodeId, classes: Vec<usize> },
    MseMean { pred: NodeId, targets: Vec<f64> },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Default)]
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.by_node.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.by_node.get_mut(id.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    consumed: bool,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Which inputs of every ReLU on the tape are positive, in tape order.
    /// Two evaluations with different patterns straddle a kink.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.nodes[x.0].value.data().iter().map(|&v| v > 0.0));
            }
        }
        out
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Cow::Owned(value), false)
    }

    /// Owned leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(Cow::Owned(value), true)
    }

    /// Borrowed trainable parameter.
    pub fn param(&mut self, value: &'p Tensor) -> NodeId {
        self.push_leaf(Cow::Borrowed(value), true)
    }

    fn push_leaf(&mut self, value: Cow<'p, Tensor>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(TfnError::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn shape2(&self, id: NodeId) -> (usize, usize) {
        let v = self.value(id);
        (v.rows(), v.cols())
    }

    pub fn matmul_t(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (b, inp) = self.shape2(x);
        let wv = self.value(w);
        if wv.shape().len() != 2 || wv.shape()[1] != inp {
            return Err(TfnError::dim(
                "matmul input",
                format!("{} features", wv.shape().get(1).copied().unwrap_or(0)),
                format!("{inp} features"),
            ));
        }
        let out = wv.shape()[0];
        let mut y = vec![0.0; b * out];
        gemm(b, inp, out, self.value(x).data(), false, wv.data(), true, &mut y, 0.0);
        let y = Tensor::new(vec![b, out], y)?;
        self.push("matmul", y, Op::MatMulT { x, w }, &[x, w])
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (b, n) = self.shape2(x);
        let bv = self.value(bias);
        if bv.len() != n {
            return Err(TfnError::dim("bias", n, bv.len()));
        }
        let mut y = self.value(x).data().to_vec();
        for row in y.chunks_mut(n.max(1)) {
            for (v, bb) in row.iter_mut().zip(bv.data()) {
                *v += bb;
            }
        }
        let y = Tensor::new(vec![b, n], y)?;
        self.push("add_bias", y, Op::AddBias { x, b: bias }, &[x, bias])
    }

    fn map(&mut self, x: NodeId, name: &str, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        let xv = self.value(x);
        let y = Tensor::new(xv.shape().to_vec(), xv.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, y, op, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.map(x, "relu", |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.map(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.map(x, "tanh", f64::tanh, Op::Tanh(x))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.map(x, "affine", |v| scale * v + shift, Op::Affine { x, scale })
    }

    fn zip(&mut self, a: NodeId, b: NodeId, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(TfnError::dim(name, format!("{:?}", av.shape()), format!("{:?}", bv.shape())));
        }
        let y = av.data().iter().zip(bv.data()).map(|(&p, &q)| f(p, q)).collect();
        let y = Tensor::new(av.shape().to_vec(), y)?;
        self.push(name, y, op, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, "add", |p, q| p + q, Op::Add(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip(a, b, "mul", |p, q| p * q, Op::Mul(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return Err(TfnError::Empty("concat of zero parts".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.shape2(p);
            if r != rows {
                return Err(TfnError::dim("concat rows", rows, r));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut y = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                y.extend_from_slice(self.value(p).row(r));
            }
        }
        let y = Tensor::new(vec![rows, total], y)?;
        self.push("concat", y, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (rows, cols) = self.shape2(x);
        if start + len > cols {
            return Err(TfnError::dim("column slice", format!("end <= {cols}"), start + len));
        }
        let xv = self.value(x);
        let mut y = Vec::with_capacity(rows * len);
        for r in 0..rows {
            y.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let y = Tensor::new(vec![rows, len], y)?;
        self.push("slice", y, Op::SliceCols { x, start }, &[x])
    }

    /// Appends a constant 1 column.
    pub fn augment_one(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.shape2(x);
        let xv = self.value(x);
        let mut y = Vec::with_capacity(rows * (cols + 1));
        for r in 0..rows {
            y.extend_from_slice(xv.row(r));
            y.push(1.0);
        }
        let y = Tensor::new(vec![rows, cols + 1], y)?;
        self.push("augment_one", y, Op::AugmentOne(x), &[x])
    }

    /// Row-wise triple outer product, flattened row-major as
    /// `out[r][(i * nb + j) * nc + k] = (a[r][i] * b[r][j]) * c[r][k]`.
    pub fn outer3(&mut self, a: NodeId, b: NodeId, c: NodeId) -> Result<NodeId> {
        let (rows, na) = self.shape2(a);
        let (rb, nb) = self.shape2(b);
        let (rc, nc) = self.shape2(c);
        if rb != rows || rc != rows {
            return Err(TfnError::dim("outer3 batch", rows, format!("{rb}/{rc}")));
        }
        let block = na * nb * nc;
        let mut y = vec![0.0; rows * block];
        for r in 0..rows {
            outer3_into(
                self.value(a).row(r),
                self.value(b).row(r),
                self.value(c).row(r),
                &mut y[r * block..(r + 1) * block],
            );
        }
        let y = Tensor::new(vec![rows, block], y)?;
        self.push("outer3", y, Op::Outer3(a, b, c), &[a, b, c])
    }

    /// Selects columns by index from every row.
    pub fn gather(&mut self, x: NodeId, indices: Arc<[usize]>) -> Result<NodeId> {
        let (rows, cols) = self.shape2(x);
        if let Some(&bad) = indices.iter().find(|&&i| i >= cols) {
            return Err(TfnError::dim("gather index", format!("< {cols}"), bad));
        }
        let xv = self.value(x);
        let mut y = Vec::with_capacity(rows * indices.len());
        for r in 0..rows {
            let row = xv.row(r);
            y.extend(indices.iter().map(|&i| row[i]));
        }
        let y = Tensor::new(vec![rows, indices.len()], y)?;
        self.push("gather", y, Op::Gather { x, indices }, &[x])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.shape2(x);
        let xv = self.value(x);
        let mut y = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            y.extend(softmax(xv.row(r)));
        }
        let y = Tensor::new(vec![rows, cols], y)?;
        self.push("softmax", y, Op::Softmax(x), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn sum_squares(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).sum_squares();
        self.push("sum_squares", Tensor::scalar(s), Op::SumSquares(x), &[x])
    }

    /// Mean binary cross-entropy of probabilities `p: [B, 1]` against 0/1 targets.
    pub fn bce_mean(&mut self, p: NodeId, targets: Vec<f64>) -> Result<NodeId> {
        let pv = self.value(p);
        if pv.len() != targets.len() || targets.is_empty() {
            return Err(TfnError::dim("bce targets", pv.len(), targets.len()));
        }
        let n = targets.len() as f64;
        let loss = pv
            .data()
            .iter()
            .zip(&targets)
            .map(|(&p, &t)| -(t * p.max(LOG_CLAMP).ln() + (1.0 - t) * (1.0 - p).max(LOG_CLAMP).ln()))
            .sum::<f64>()
            / n;
        self.push("bce", Tensor::scalar(loss), Op::BceMean { p, targets }, &[p])
    }

    /// Mean categorical cross-entropy of row distributions `probs: [B, K]`.
    pub fn cross_entropy_mean(&mut self, probs: NodeId, classes: Vec<usize>) -> Result<NodeId> {
        let (rows, k) = self.shape2(probs);
        if rows != classes.len() || classes.is_empty() {
            return Err(TfnError::dim("cross-entropy targets", rows, classes.len()));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c >= k) {
            return Err(TfnError::dim("class index", format!("< {k}"), bad));
        }
        let pv = self.value(probs);
        let loss = classes
            .iter()
            .enumerate()
            .map(|(r, &c)| -pv.row(r)[c].max(LOG_CLAMP).ln())
            .sum::<f64>()
            / rows as f64;
        self.push("cross_entropy", Tensor::scalar(loss), Op::CrossEntropyMean { probs, classes }, &[probs])
    }

    pub fn mse_mean(&mut self, pred: NodeId, targets: Vec<f64>) -> Result<NodeId> {
        let pv = self.value(pred);
        if pv.len() != targets.len() || targets.is_empty() {
            return Err(TfnError::dim("mse targets", pv.len(), targets.len()));
        }
        let loss = pv
            .data()
            .iter()
            .zip(&targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / targets.len() as f64;
        self.push("mse", Tensor::scalar(loss), Op::MseMean { pred, targets }, &[pred])
    }

    /// Reverse sweep from a scalar node. A tape supports exactly one sweep.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.consumed {
            return Err(TfnError::BackwardTwice);
        }
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(TfnError::NonScalarLoss(shape));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(&shape, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }
        Ok(Gradients { by_node: grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &self.nodes[idx].value;
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMulT { x, w } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (b, inp) = (xv.rows(), xv.cols());
                let out = wv.shape()[0];
                if self.wants(*x) {
                    let (buf, beta) = slot(grads, *x, xv.shape());
                    gemm(b, out, inp, gd, false, wv.data(), false, buf, beta);
                }
                if self.wants(*w) {
                    let (buf, beta) = slot(grads, *w, wv.shape());
                    gemm(out, b, inp, gd, true, xv.data(), false, buf, beta);
                }
            }
            Op::AddBias { x, b } => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.shape(), gd.iter().copied());
                }
                if self.wants(*b) {
                    let n = g.cols();
                    let mut db = vec![0.0; n];
                    for row in gd.chunks(n.max(1)) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let shape = self.value(*b).shape().to_vec();
                    accumulate(grads, *b, &shape, db.into_iter());
                }
            }
            Op::Relu(x) => {
                let it = gd.iter().zip(y.data()).map(|(g, &y)| if y > 0.0 { *g } else { 0.0 });
                accumulate(grads, *x, y.shape(), it);
            }
            Op::Sigmoid(x) => {
                let it = gd.iter().zip(y.data()).map(|(g, &y)| g * y * (1.0 - y));
                accumulate(grads, *x, y.shape(), it);
            }
            Op::Tanh(x) => {
                let it = gd.iter().zip(y.data()).map(|(g, &y)| g * (1.0 - y * y));
                accumulate(grads, *x, y.shape(), it);
            }
            Op::Affine { x, scale } => {
                accumulate(grads, *x, y.shape(), gd.iter().map(|g| g * scale));
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if self.wants(id) {
                        accumulate(grads, id, y.shape(), gd.iter().copied());
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    accumulate(grads, *a, y.shape(), gd.iter().zip(bv.data()).map(|(g, v)| g * v));
                }
                if self.wants(*b) {
                    accumulate(grads, *b, y.shape(), gd.iter().zip(av.data()).map(|(g, v)| g * v));
                }
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = (g.rows(), g.cols());
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    if self.wants(p) {
                        let it = (0..rows).flat_map(|r| gd[r * total + offset..r * total + offset + w].iter().copied());
                        let shape = pv.shape().to_vec();
                        accumulate(grads, p, &shape, it);
                    }
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (rows, cols) = (xv.rows(), xv.cols());
                let len = g.cols();
                let (buf, beta) = slot(grads, *x, xv.shape());
                if beta == 0.0 {
                    buf.iter_mut().for_each(|v| *v = 0.0);
                }
                for r in 0..rows {
                    let dst = &mut buf[r * cols + start..r * cols + start + len];
                    for (d, s) in dst.iter_mut().zip(&gd[r * len..(r + 1) * len]) {
                        *d += s;
                    }
                }
            }
            Op::AugmentOne(x) => {
                let xv = self.value(*x);
                let (rows, cols) = (xv.rows(), xv.cols());
                let it = (0..rows).flat_map(|r| gd[r * (cols + 1)..r * (cols + 1) + cols].iter().copied());
                let shape = xv.shape().to_vec();
                accumulate(grads, *x, &shape, it);
            }
            Op::Outer3(a, b, c) => {
                let (av, bv, cv) = (self.value(*a), self.value(*b), self.value(*c));
                let (na, nb, nc) = (av.cols(), bv.cols(), cv.cols());
                let rows = av.rows();
                let mut da = vec![0.0; rows * na];
                let mut db = vec![0.0; rows * nb];
                let mut dc = vec![0.0; rows * nc];
                let block = na * nb * nc;
                for r in 0..rows {
                    let (ar, br, cr) = (av.row(r), bv.row(r), cv.row(r));
                    let gr = &gd[r * block..(r + 1) * block];
                    let dar = &mut da[r * na..(r + 1) * na];
                    let dbr = &mut db[r * nb..(r + 1) * nb];
                    let dcr = &mut dc[r * nc..(r + 1) * nc];
                    for i in 0..na {
                        for j in 0..nb {
                            let fiber = &gr[(i * nb + j) * nc..(i * nb + j + 1) * nc];
                            let dot: f64 = fiber.iter().zip(cr).map(|(g, c)| g * c).sum();
                            dar[i] += br[j] * dot;
                            dbr[j] += ar[i] * dot;
                            let ab = ar[i] * br[j];
                            for (d, g) in dcr.iter_mut().zip(fiber) {
                                *d += ab * g;
                            }
                        }
                    }
                }
                let shapes = [av.shape().to_vec(), bv.shape().to_vec(), cv.shape().to_vec()];
                for ((id, d), shape) in [(*a, da), (*b, db), (*c, dc)].into_iter().zip(shapes) {
                    if self.wants(id) {
                        accumulate(grads, id, &shape, d.into_iter());
                    }
                }
            }
            Op::Gather { x, indices } => {
                let xv = self.value(*x);
                let (rows, cols) = (xv.rows(), xv.cols());
                let (buf, beta) = slot(grads, *x, xv.shape());
                if beta == 0.0 {
                    buf.iter_mut().for_each(|v| *v = 0.0);
                }
                let m = indices.len();
                for r in 0..rows {
                    for (t, &i) in indices.iter().enumerate() {
                        buf[r * cols + i] += gd[r * m + t];
                    }
                }
            }
            Op::Softmax(x) => {
                let cols = y.cols();
                let mut dx = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = &gd[r * cols..(r + 1) * cols];
                    let inner: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    dx.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - inner)));
                }
                accumulate(grads, *x, y.shape(), dx.into_iter());
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                let shape = xv.shape().to_vec();
                accumulate(grads, *x, &shape, std::iter::repeat_n(gd[0], xv.len()));
            }
            Op::SumSquares(x) => {
                let xv = self.value(*x);
                let shape = xv.shape().to_vec();
                accumulate(grads, *x, &shape, xv.data().iter().map(|v| 2.0 * v * gd[0]));
            }
            Op::BceMean { p, targets } => {
                let pv = self.value(*p);
                let n = targets.len() as f64;
                let it = pv.data().iter().zip(targets).map(|(&p, &t)| {
                    let mut d = 0.0;
                    if p > LOG_CLAMP {
                        d -= t / p;
                    }
                    if 1.0 - p > LOG_CLAMP {
                        d += (1.0 - t) / (1.0 - p);
                    }
                    gd[0] * d / n
                });
                let shape = pv.shape().to_vec();
                accumulate(grads, *p, &shape, it);
            }
            Op::CrossEntropyMean { probs, classes } => {
                let pv = self.value(*probs);
                let (rows, k) = (pv.rows(), pv.cols());
                let mut d = vec![0.0; rows * k];
                for (r, &c) in classes.iter().enumerate() {
                    let pc = pv.row(r)[c];
                    if pc > LOG_CLAMP {
                        d[r * k + c] = -gd[0] / (pc * rows as f64);
                    }
                }
                let shape = pv.shape().to_vec();
                accumulate(grads, *probs, &shape, d.into_iter());
            }
            Op::MseMean { pred, targets } => {
                let pv = self.value(*pred);
                let n = targets.len() as f64;
                let it = pv.data().iter().zip(targets).map(|(p, t)| gd[0] * 2.0 * (p - t) / n);
                let shape = pv.shape().to_vec();
                accumulate(grads, *pred, &shape, it);
            }
        }
    }
}

/// Returns the gradient buffer for `id` and the gemm `beta` to write with:
/// 0 for a fresh buffer, 1 to accumulate into an existing one.
fn slot<'g>(grads: &'g mut [Option<Tensor>], id: NodeId, shape: &[usize]) -> (&'g mut [f64], f64) {
    let beta = if grads[id.0].is_some() { 1.0 } else { 0.0 };
    let t = grads[id.0].get_or_insert_with(|| Tensor::zeros(shape));
    (t.data_mut(), beta)
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], values: impl Iterator<Item = f64>) {
    match &mut grads[id.0] {
        Some(t) => {
            for (d, v) in t.data_mut().iter_mut().zip(values) {
                *d += v;
            }
        }
        slot @ None => {
            let data: Vec<f64> = values.collect();
            *slot = Some(Tensor::new(shape.to_vec(), data).expect("gradient shape mirrors value shape"));
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

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `out[(i * nb + j) * nc + k] = (a[i] * b[j]) * c[k]`.
pub(crate) fn outer3_into(a: &[f64], b: &[f64], c: &[f64], out: &mut [f64]) {
    let (nb, nc) = (b.len(), c.len());
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            let ab = ai * bj;
            let dst = &mut out[(i * nb + j) * nc..(i * nb + j + 1) * nc];
            for (d, &ck) in dst.iter_mut().zip(c) {
                *d = ab * ck;
            }
        }
    }
}
