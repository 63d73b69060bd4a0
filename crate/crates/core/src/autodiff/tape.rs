//! Recorded computation tape for reverse-mode differentiation.
//!
//! Every primitive appends a node holding its forward value plus the
//! information the exact backward rule needs. Gradients accumulate
//! additively: a value consumed twice receives the sum of both
//! contributions.

use std::collections::HashMap;

use super::tensor::Tensor;
use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf { name: Option<String> },
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    BiasAdd(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    Relu(NodeId),
    Gelu(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    EmbeddingLookup { table: NodeId, ids: Vec<usize> },
    MeanPoolMasked { x: NodeId, mask: Vec<f64> },
    CosineSimilarity(NodeId, NodeId),
    MseLoss(NodeId, NodeId),
    MaskedCrossEntropy { logits: NodeId, labels: Vec<Option<usize>> },
    Transpose(NodeId),
    ColSlice { x: NodeId, start: usize, len: usize },
    RowSlice { x: NodeId, start: usize, len: usize },
    ConcatCols(Vec<NodeId>),
    Dropout { x: NodeId, keep: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Tape of recorded primitives. Confined to one thread for the duration of a
/// forward/backward pass.
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Named differentiable leaf; `backward` reports a gradient for it.
    pub fn leaf(&mut self, name: &str, tensor: Tensor) -> NodeId {
        self.push(tensor, Op::Leaf { name: Some(name.to_string()) })
    }

    /// Anonymous leaf; gradients flow through but are not reported.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.push(tensor, Op::Leaf { name: None })
    }

    fn rank2(&self, op: &'static str, id: NodeId) -> Result<(usize, usize), AutodiffError> {
        let t = self.value(id);
        match t.shape() {
            [r, c] => Ok((*r, *c)),
            other => {
                Err(AutodiffError::BadRank { op, expected: 2, shape: other.to_vec() })
            }
        }
    }

    /// (m,k) x (k,n) -> (m,n)
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::Matmul(a, b)))
    }

    /// Elementwise addition of same-shaped tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "add",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b)))
    }

    /// (m,n) + (n,) broadcast over rows; the only broadcasting form.
    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, AutodiffError> {
        let (m, n) = self.rank2("bias_add", x)?;
        let b = self.value(bias);
        if b.shape() != [n] {
            return Err(AutodiffError::ShapeMismatch {
                op: "bias_add",
                lhs: vec![m, n],
                rhs: b.shape().to_vec(),
            });
        }
        let bd = b.data().to_vec();
        let data: Vec<f64> = self
            .value(x)
            .data()
            .chunks(n)
            .flat_map(|row| row.iter().zip(&bd).map(|(v, w)| v + w).collect::<Vec<_>>())
            .collect();
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::BiasAdd(x, bias)))
    }

    pub fn scalar_mul(&mut self, x: NodeId, factor: f64) -> Result<NodeId, AutodiffError> {
        if !factor.is_finite() {
            return Err(AutodiffError::NonFinite("scalar_mul factor".into()));
        }
        let t = self.value(x);
        let data = t.data().iter().map(|v| v * factor).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::ScalarMul(x, factor)))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| v.max(0.0)).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Relu(x)))
    }

    pub fn gelu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| gelu_forward(v)).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Gelu(x)))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| sigmoid_forward(v)).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Sigmoid(x)))
    }

    /// Softmax along the last axis of a rank-2 tensor.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let (m, n) = self.rank2("softmax", x)?;
        let mut data = Vec::with_capacity(m * n);
        for row in self.value(x).data().chunks(n) {
            data.extend(softmax_row(row));
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::Softmax(x)))
    }

    /// Layer normalization along the last axis with learned gain/bias.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId, AutodiffError> {
        let (m, n) = self.rank2("layer_norm", x)?;
        for (which, id) in [("gain", gain), ("bias", bias)] {
            if self.value(id).shape() != [n] {
                return Err(AutodiffError::ShapeMismatch {
                    op: if which == "gain" { "layer_norm gain" } else { "layer_norm bias" },
                    lhs: vec![m, n],
                    rhs: self.value(id).shape().to_vec(),
                });
            }
        }
        let g = self.value(gain).data().to_vec();
        let b = self.value(bias).data().to_vec();
        let mut data = Vec::with_capacity(m * n);
        for row in self.value(x).data().chunks(n) {
            let (mean, var) = mean_var(row);
            let inv_std = 1.0 / (var + eps).sqrt();
            for (j, &v) in row.iter().enumerate() {
                data.push((v - mean) * inv_std * g[j] + b[j]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, n], data), Op::LayerNorm { x, gain, bias, eps }))
    }

    /// Gather rows `ids` from a (V,d) table into (len(ids), d).
    pub fn embedding_lookup(
        &mut self,
        table: NodeId,
        ids: &[usize],
    ) -> Result<NodeId, AutodiffError> {
        let (v, d) = self.rank2("embedding_lookup", table)?;
        for &id in ids {
            if id >= v {
                return Err(AutodiffError::IndexOutOfBounds {
                    op: "embedding_lookup",
                    index: id,
                    limit: v,
                });
            }
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&src[id * d..(id + 1) * d]);
        }
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], data),
            Op::EmbeddingLookup { table, ids: ids.to_vec() },
        ))
    }

    /// Mean over rows of (L,d) restricted to positions with mask 1 -> (d,).
    pub fn mean_pool_masked(&mut self, x: NodeId, mask: &[u8]) -> Result<NodeId, AutodiffError> {
        let (l, d) = self.rank2("mean_pool_masked", x)?;
        if mask.len() != l {
            return Err(AutodiffError::ShapeMismatch {
                op: "mean_pool_masked",
                lhs: vec![l, d],
                rhs: vec![mask.len()],
            });
        }
        let maskf: Vec<f64> = mask.iter().map(|&m| f64::from(m)).collect();
        let count: f64 = maskf.iter().sum();
        if count == 0.0 {
            return Err(AutodiffError::InvalidArgument(
                "mean_pool_masked: all positions masked out".into(),
            ));
        }
        let mut data = vec![0.0; d];
        for (i, row) in self.value(x).data().chunks(d).enumerate() {
            if maskf[i] > 0.0 {
                for (j, &v) in row.iter().enumerate() {
                    data[j] += v;
                }
            }
        }
        for v in &mut data {
            *v /= count;
        }
        Ok(self.push(Tensor::from_parts(vec![d], data), Op::MeanPoolMasked { x, mask: maskf }))
    }

    /// Cosine similarity of two rank-1 vectors -> scalar.
    pub fn cosine_similarity(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.shape().len() != 1 || ta.shape() != tb.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "cosine_similarity",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (dot, na, nb) = dot_norms(ta.data(), tb.data());
        if na == 0.0 || nb == 0.0 {
            return Err(AutodiffError::InvalidArgument(
                "cosine_similarity: zero-norm vector".into(),
            ));
        }
        let value = dot / (na * nb);
        Ok(self.push(Tensor::from_parts(vec![], vec![value]), Op::CosineSimilarity(a, b)))
    }

    /// Mean squared error over all elements -> scalar.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, AutodiffError> {
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mse_loss",
                lhs: self.value(pred).shape().to_vec(),
                rhs: self.value(target).shape().to_vec(),
            });
        }
        let n = self.value(pred).numel() as f64;
        let sum: f64 = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        Ok(self.push(Tensor::from_parts(vec![], vec![sum / n]), Op::MseLoss(pred, target)))
    }

    /// Mean cross-entropy over labeled rows of (L,V) logits; rows with label
    /// `None` are ignored. Zero labeled rows yield a defined loss of 0.
    pub fn masked_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[Option<usize>],
    ) -> Result<NodeId, AutodiffError> {
        let (l, v) = self.rank2("masked_cross_entropy", logits)?;
        if labels.len() != l {
            return Err(AutodiffError::ShapeMismatch {
                op: "masked_cross_entropy",
                lhs: vec![l, v],
                rhs: vec![labels.len()],
            });
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (row, label) in self.value(logits).data().chunks(v).zip(labels) {
            if let Some(target) = label {
                if *target >= v {
                    return Err(AutodiffError::IndexOutOfBounds {
                        op: "masked_cross_entropy",
                        index: *target,
                        limit: v,
                    });
                }
                total += log_sum_exp(row) - row[*target];
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        Ok(self.push(
            Tensor::from_parts(vec![], vec![loss]),
            Op::MaskedCrossEntropy { logits, labels: labels.to_vec() },
        ))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        let (m, n) = self.rank2("transpose", x)?;
        let src = self.value(x).data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], data), Op::Transpose(x)))
    }

    /// Columns [start, start+len) of a rank-2 tensor.
    pub fn col_slice(
        &mut self,
        x: NodeId,
        start: usize,
        len: usize,
    ) -> Result<NodeId, AutodiffError> {
        let (m, n) = self.rank2("col_slice", x)?;
        if start + len > n {
            return Err(AutodiffError::IndexOutOfBounds {
                op: "col_slice",
                index: start + len,
                limit: n,
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for row in src.chunks(n) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Ok(self.push(Tensor::from_parts(vec![m, len], data), Op::ColSlice { x, start, len }))
    }

    /// Rows [start, start+len) of a rank-2 tensor.
    pub fn row_slice(
        &mut self,
        x: NodeId,
        start: usize,
        len: usize,
    ) -> Result<NodeId, AutodiffError> {
        let (m, n) = self.rank2("row_slice", x)?;
        if start + len > m {
            return Err(AutodiffError::IndexOutOfBounds {
                op: "row_slice",
                index: start + len,
                limit: m,
            });
        }
        let src = self.value(x).data();
        let data = src[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::from_parts(vec![len, n], data), Op::RowSlice { x, start, len }))
    }

    /// Concatenate rank-2 tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::InvalidArgument("concat_cols: empty input".into()));
        }
        let (m, _) = self.rank2("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mp, np) = self.rank2("concat_cols", p)?;
            if mp != m {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            widths.push(np);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m, total], data), Op::ConcatCols(parts.to_vec())))
    }

    /// Inverted dropout with a caller-supplied keep mask already scaled by
    /// 1/(1-rate); entries are either 0 or 1/(1-rate).
    pub fn dropout(&mut self, x: NodeId, keep: &[f64]) -> Result<NodeId, AutodiffError> {
        let t = self.value(x);
        if keep.len() != t.numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "dropout",
                lhs: t.shape().to_vec(),
                rhs: vec![keep.len()],
            });
        }
        let data = t.data().iter().zip(keep).map(|(v, k)| v * k).collect();
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Dropout { x, keep: keep.to_vec() }))
    }

    /// Reverse-mode sweep from a scalar loss. Returns the gradient for every
    /// named leaf on the tape; leaves the loss does not reach get zeros.
    pub fn backward(&self, loss: NodeId) -> Result<HashMap<String, Tensor>, AutodiffError> {
        if self.nodes.is_empty() {
            return Err(AutodiffError::InvalidArgument("backward on empty tape".into()));
        }
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(loss_value.shape().to_vec(), vec![1.0]));

        for i in (0..=loss.0).rev() {
            let Some(grad) = grads[i].take() else { continue };
            self.accumulate_parents(i, &grad, &mut grads)?;
            grads[i] = Some(grad);
        }

        let mut out = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { name: Some(name) } = &node.op {
                let grad = grads[i].take().unwrap_or_else(|| Tensor::zeros_like(&node.value));
                out.insert(name.clone(), grad);
            }
        }
        Ok(out)
    }

    fn accumulate_parents(
        &self,
        index: usize,
        grad: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), AutodiffError> {
        let node = &self.nodes[index];
        let g = grad.data();
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Matmul(a, b) => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                let da = matmul_nt(g, self.value(*b).data(), m, n, k);
                let db = matmul_tn(self.value(*a).data(), g, m, k, n);
                accumulate(grads, a.0, Tensor::from_parts(vec![m, k], da));
                accumulate(grads, b.0, Tensor::from_parts(vec![k, n], db));
            }
            Op::Add(a, b) => {
                accumulate(grads, a.0, grad.clone());
                accumulate(grads, b.0, grad.clone());
            }
            Op::BiasAdd(x, bias) => {
                let n = self.value(*bias).numel();
                let mut db = vec![0.0; n];
                for row in g.chunks(n) {
                    for (j, &v) in row.iter().enumerate() {
                        db[j] += v;
                    }
                }
                accumulate(grads, x.0, grad.clone());
                accumulate(grads, bias.0, Tensor::from_parts(vec![n], db));
            }
            Op::ScalarMul(x, factor) => {
                let data = g.iter().map(|v| v * factor).collect();
                accumulate(
                    grads,
                    x.0,
                    Tensor::from_parts(self.value(*x).shape().to_vec(), data),
                );
            }
            Op::Relu(x) => {
                let data = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(
                    grads,
                    x.0,
                    Tensor::from_parts(self.value(*x).shape().to_vec(), data),
                );
            }
            Op::Gelu(x) => {
                let data = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| gelu_derivative(v) * gv)
                    .collect();
                accumulate(
                    grads,
                    x.0,
                    Tensor::from_parts(self.value(*x).shape().to_vec(), data),
                );
            }
            Op::Sigmoid(x) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gv)| y * (1.0 - y) * gv)
                    .collect();
                accumulate(
                    grads,
                    x.0,
                    Tensor::from_parts(self.value(*x).shape().to_vec(), data),
                );
            }
            Op::Softmax(x) => {
                let n = node.value.cols();
                let mut data = Vec::with_capacity(node.value.numel());
                for (y_row, g_row) in node.value.data().chunks(n).zip(g.chunks(n)) {
                    let weighted: f64 = y_row.iter().zip(g_row).map(|(y, gv)| y * gv).sum();
                    data.extend(y_row.iter().zip(g_row).map(|(y, gv)| y * (gv - weighted)));
                }
                accumulate(
                    grads,
                    x.0,
                    Tensor::from_parts(self.value(*x).shape().to_vec(), data),
                );
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let n = node.value.cols();
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let mut dx = Vec::with_capacity(xv.len());
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                for (x_row, g_row) in xv.chunks(n).zip(g.chunks(n)) {
                    let (mean, var) = mean_var(x_row);
                    let inv_std = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = x_row.iter().map(|&v| (v - mean) * inv_std).collect();
                    let dxhat: Vec<f64> =
                        g_row.iter().zip(gv).map(|(gr, ga)| gr * ga).collect();
                    let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dxhat_xhat: f64 =
                        dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dgain[j] += g_row[j] * xhat[j];
                        dbias[j] += g_row[j];
                        dx.push(inv_std * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat));
                    }
                }
                accumulate(grads, x.0, Tensor::from_parts(self.value(*x).shape().to_vec(), dx));
                accumulate(grads, gain.0, Tensor::from_parts(vec![n], dgain));
                accumulate(grads, bias.0, Tensor::from_parts(vec![n], dbias));
            }
            Op::EmbeddingLookup { table, ids } => {
                let d = node.value.cols();
                let mut dt = Tensor::zeros_like(self.value(*table));
                for (row, &id) in ids.iter().enumerate() {
                    let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                    for (j, v) in dst.iter_mut().enumerate() {
                        *v += g[row * d + j];
                    }
                }
                accumulate(grads, table.0, dt);
            }
            Op::MeanPoolMasked { x, mask } => {
                let d = node.value.numel();
                let count: f64 = mask.iter().sum();
                let mut dx = Vec::with_capacity(mask.len() * d);
                for &m in mask {
                    let w = m / count;
                    dx.extend(g.iter().map(|gv| gv * w));
                }
                accumulate(grads, x.0, Tensor::from_parts(vec![mask.len(), d], dx));
            }
            Op::CosineSimilarity(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let (dot, na, nb) = dot_norms(av, bv);
                let c = dot / (na * nb);
                let gs = g[0];
                let da: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| gs * (y / (na * nb) - c * x / (na * na)))
                    .collect();
                let db: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .map(|(&x, &y)| gs * (x / (na * nb) - c * y / (nb * nb)))
                    .collect();
                accumulate(grads, a.0, Tensor::from_parts(vec![av.len()], da));
                accumulate(grads, b.0, Tensor::from_parts(vec![bv.len()], db));
            }
            Op::MseLoss(pred, target) => {
                let pv = self.value(*pred).data();
                let tv = self.value(*target).data();
                let n = pv.len() as f64;
                let gs = g[0];
                let dp: Vec<f64> =
                    pv.iter().zip(tv).map(|(&p, &t)| gs * 2.0 * (p - t) / n).collect();
                let dt: Vec<f64> =
                    pv.iter().zip(tv).map(|(&p, &t)| gs * -2.0 * (p - t) / n).collect();
                accumulate(
                    grads,
                    pred.0,
                    Tensor::from_parts(self.value(*pred).shape().to_vec(), dp),
                );
                accumulate(
                    grads,
                    target.0,
                    Tensor::from_parts(self.value(*target).shape().to_vec(), dt),
                );
            }
            Op::MaskedCrossEntropy { logits, labels } => {
                let v = self.value(*logits).cols();
                let count = labels.iter().filter(|l| l.is_some()).count();
                let mut dl = vec![0.0; self.value(*logits).numel()];
                if count > 0 {
                    let gs = g[0] / count as f64;
                    for (row, label) in labels.iter().enumerate() {
                        if let Some(target) = label {
                            let logit_row =
                                &self.value(*logits).data()[row * v..(row + 1) * v];
                            let probs = softmax_row(logit_row);
                            for j in 0..v {
                                let indicator = if j == *target { 1.0 } else { 0.0 };
                                dl[row * v + j] = gs * (probs[j] - indicator);
                            }
                        }
                    }
                }
                accumulate(
                    grads,
                    logits.0,
                    Tensor::from_parts(self.value(*logits).shape().to_vec(), dl),
                );
            }
            Op::Transpose(x) => {
                let (m, n) = (self.value(*x).rows(), self.value(*x).cols());
                let mut dx = vec![0.0; m * n];
                for i in 0..n {
                    for j in 0..m {
                        dx[j * n + i] = g[i * m + j];
                    }
                }
                accumulate(grads, x.0, Tensor::from_parts(vec![m, n], dx));
            }
            Op::ColSlice { x, start, len } => {
                let (m, n) = (self.value(*x).rows(), self.value(*x).cols());
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..*len {
                        dx[i * n + start + j] = g[i * len + j];
                    }
                }
                accumulate(grads, x.0, Tensor::from_parts(vec![m, n], dx));
            }
            Op::RowSlice { x, start, len } => {
                let (m, n) = (self.value(*x).rows(), self.value(*x).cols());
                let mut dx = vec![0.0; m * n];
                dx[start * n..(start + len) * n].copy_from_slice(g);
                accumulate(grads, x.0, Tensor::from_parts(vec![m, n], dx));
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut dp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        dp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    accumulate(grads, p.0, Tensor::from_parts(vec![m, w], dp));
                    offset += w;
                }
            }
            Op::Dropout { x, keep } => {
                let data = g.iter().zip(keep).map(|(gv, k)| gv * k).collect();
                accumulate(
                    grads,
                    x.0,
                    Tensor::from_parts(self.value(*x).shape().to_vec(), data),
                );
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], index: usize, delta: Tensor) {
    match &mut grads[index] {
        Some(existing) => {
            for (dst, src) in existing.data_mut().iter_mut().zip(delta.data()) {
                *dst += src;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    out
}

/// g (m,n) x b^T (n,k) -> (m,k)
fn matmul_nt(g: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            let mut acc = 0.0;
            for j in 0..n {
                acc += g[i * n + j] * b[p * n + j];
            }
            out[i * k + p] = acc;
        }
    }
    out
}

/// a^T (k,m) x g (m,n) -> (k,n)
fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let g_row = &g[i * n..(i + 1) * n];
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
    out
}

fn dot_norms(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot, na, nb)
}

fn sigmoid_forward(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_COEFF: f64 = 0.044715;

fn gelu_forward(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + GELU_COEFF * x.powi(3))).tanh())
}

fn gelu_derivative(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    let u = c * (x + GELU_COEFF * x.powi(3));
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * c * (1.0 + 3.0 * GELU_COEFF * x * x)
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

fn mean_var(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}
