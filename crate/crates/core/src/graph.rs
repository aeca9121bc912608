//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Operations append nodes in creation order; [`Graph::backward`] walks the
//! tape once in reverse, accumulating gradients additively, so a value
//! consumed twice receives the sum of both contributions. Any op whose output
//! contains a non-finite value fails immediately instead of letting a NaN
//! propagate into the optimizer.

use thiserror::Error;

use crate::kernels;
use crate::scalar::Scalar;
use crate::tensor::{ShapeError, Tensor};

pub const RMSNORM_EPS: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("token id {id} out of range for table with {rows} rows")]
    IdOutOfRange { id: u32, rows: usize },
    #[error("attention mask needs {required} kv positions, kv holds {kv_seq}")]
    KvTooShort { required: usize, kv_seq: usize },
}

/// Handle to a node in one specific [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        a: NodeId,
        factor: f64,
    },
    Sum {
        a: NodeId,
    },
    SoftmaxLastDim {
        a: NodeId,
    },
    RmsNorm {
        x: NodeId,
        gain: NodeId,
    },
    Silu {
        a: NodeId,
    },
    Rope {
        x: NodeId,
        n_heads: usize,
        head_dim: usize,
        pos_start: usize,
    },
    Gather {
        table: NodeId,
        ids: Vec<u32>,
    },
    Attention {
        q: NodeId,
        keys: NodeId,
        values: NodeId,
        n_heads: usize,
        n_kv_heads: usize,
        head_dim: usize,
        causal_offset: usize,
    },
    CrossEntropySum {
        logits: NodeId,
        targets: Vec<u32>,
        ignore: u32,
    },
}

struct Node<F: Scalar> {
    value: Tensor<F>,
    /// Op-specific saved forward state (softmax output, attention weights).
    aux: Option<Tensor<F>>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`NodeId`].
pub struct Gradients<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<F>> {
        self.grads[id.0].take()
    }
}

/// A Wengert tape: ordered op records, topological by construction.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Register an input tensor. Only leaves may require gradients.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            aux: None,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.leaf(value, false)
    }

    fn push(
        &mut self,
        op_name: &'static str,
        value: Tensor<F>,
        aux: Option<Tensor<F>>,
        op: Op,
        requires_grad: bool,
    ) -> Result<NodeId, GraphError> {
        if !value.all_finite() {
            return Err(GraphError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            value,
            aux,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ── Forward ops ─────────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape().to_vec(), vb.shape().to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(ShapeError::Mismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            }
            .into());
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(va.data(), vb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.needs_grad(&[a, b]);
        self.push("matmul", value, None, Op::Matmul { a, b }, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(ShapeError::Mismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            }
            .into());
        }
        let mut out = va.clone();
        out.add_assign(vb)?;
        let rg = self.needs_grad(&[a, b]);
        self.push("add", out, None, Op::Add { a, b }, rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, GraphError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(ShapeError::Mismatch {
                op: "mul",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            }
            .into());
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.needs_grad(&[a, b]);
        self.push("mul", value, None, Op::Mul { a, b }, rg)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, GraphError> {
        let f = F::from_f64(factor);
        let value = self.value(a).map(|v| v * f);
        let rg = self.needs_grad(&[a]);
        self.push("scale", value, None, Op::Scale { a, factor }, rg)
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let mut acc = F::zero();
        for &v in self.value(a).data() {
            acc = acc + v;
        }
        let rg = self.needs_grad(&[a]);
        self.push("sum", Tensor::scalar(acc), None, Op::Sum { a }, rg)
    }

    pub fn softmax_lastdim(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let va = self.value(a);
        let d = va.last_dim();
        if d == 0 || va.numel() == 0 {
            return Err(ShapeError::EmptyExtent {
                op: "softmax_lastdim",
                shape: va.shape().to_vec(),
            }
            .into());
        }
        let mut out = va.clone();
        for r in 0..va.row_count() {
            kernels::softmax_row(&mut out.data_mut()[r * d..(r + 1) * d]);
        }
        let rg = self.needs_grad(&[a]);
        self.push("softmax_lastdim", out, None, Op::SoftmaxLastDim { a }, rg)
    }

    pub fn rmsnorm(&mut self, x: NodeId, gain: NodeId) -> Result<NodeId, GraphError> {
        let (vx, vg) = (self.value(x), self.value(gain));
        let d = vx.last_dim();
        if vg.numel() != d {
            return Err(ShapeError::Mismatch {
                op: "rmsnorm",
                lhs: vx.shape().to_vec(),
                rhs: vg.shape().to_vec(),
            }
            .into());
        }
        let out = kernels::rmsnorm_rows(vx.data(), vg.data(), d, RMSNORM_EPS);
        let value = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.needs_grad(&[x, gain]);
        self.push("rmsnorm", value, None, Op::RmsNorm { x, gain }, rg)
    }

    pub fn silu(&mut self, a: NodeId) -> Result<NodeId, GraphError> {
        let value = self.value(a).map(kernels::silu);
        let rg = self.needs_grad(&[a]);
        self.push("silu", value, None, Op::Silu { a }, rg)
    }

    /// Rotary position embedding over `[seq, n_heads*head_dim]` rows; row `t`
    /// is rotated for absolute position `pos_start + t`.
    pub fn rope(
        &mut self,
        x: NodeId,
        n_heads: usize,
        head_dim: usize,
        pos_start: usize,
    ) -> Result<NodeId, GraphError> {
        let vx = self.value(x);
        if vx.rank() != 2 || vx.last_dim() != n_heads * head_dim || !head_dim.is_multiple_of(2) {
            return Err(ShapeError::Rank {
                op: "rope",
                expected: 2,
                shape: vx.shape().to_vec(),
            }
            .into());
        }
        let rows = vx.shape()[0];
        let mut out = vx.clone();
        kernels::rope_rows(out.data_mut(), rows, n_heads, head_dim, pos_start);
        let rg = self.needs_grad(&[x]);
        self.push(
            "rope",
            out,
            None,
            Op::Rope {
                x,
                n_heads,
                head_dim,
                pos_start,
            },
            rg,
        )
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId, GraphError> {
        let vt = self.value(table);
        if vt.rank() != 2 {
            return Err(ShapeError::Rank {
                op: "gather",
                expected: 2,
                shape: vt.shape().to_vec(),
            }
            .into());
        }
        let (rows, d) = (vt.shape()[0], vt.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= rows {
                return Err(GraphError::IdOutOfRange { id, rows });
            }
            data.extend_from_slice(&vt.data()[id as usize * d..(id as usize + 1) * d]);
        }
        let value = Tensor::new(vec![ids.len(), d], data)?;
        let rg = self.needs_grad(&[table]);
        self.push(
            "gather",
            value,
            None,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Causal grouped-query attention; see [`kernels::attn_forward`].
    /// `keys`/`values` have layout `[kv_seq, n_kv_heads*head_dim]`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        q: NodeId,
        keys: NodeId,
        values: NodeId,
        n_heads: usize,
        n_kv_heads: usize,
        head_dim: usize,
        causal_offset: usize,
    ) -> Result<NodeId, GraphError> {
        let (vq, vk, vv) = (self.value(q), self.value(keys), self.value(values));
        if vk.shape() != vv.shape() {
            return Err(ShapeError::Mismatch {
                op: "attention",
                lhs: vk.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            }
            .into());
        }
        if vq.rank() != 2
            || vk.rank() != 2
            || vq.last_dim() != n_heads * head_dim
            || vk.last_dim() != n_kv_heads * head_dim
            || !n_heads.is_multiple_of(n_kv_heads)
        {
            return Err(ShapeError::Mismatch {
                op: "attention",
                lhs: vq.shape().to_vec(),
                rhs: vk.shape().to_vec(),
            }
            .into());
        }
        let seq_q = vq.shape()[0];
        let kv_seq = vk.shape()[0];
        let required = causal_offset + 1;
        if kv_seq < required {
            return Err(GraphError::KvTooShort { required, kv_seq });
        }
        let kv = kernels::KvView::from_rows(vk.data(), vv.data(), kv_seq, n_kv_heads, head_dim);
        let mut probs = vec![F::zero(); n_heads * seq_q * kv_seq];
        let out = kernels::attn_forward(
            vq.data(),
            seq_q,
            n_heads,
            head_dim,
            &kv,
            causal_offset,
            Some(&mut probs),
        );
        let value = Tensor::new(vec![seq_q, n_heads * head_dim], out)?;
        let aux = Tensor::new(vec![n_heads, seq_q, kv_seq], probs)?;
        let rg = self.needs_grad(&[q, keys, values]);
        self.push(
            "attention",
            value,
            Some(aux),
            Op::Attention {
                q,
                keys,
                values,
                n_heads,
                n_kv_heads,
                head_dim,
                causal_offset,
            },
            rg,
        )
    }

    /// Summed next-token cross entropy. Rows whose target equals `ignore`
    /// contribute nothing. Returns the scalar node and the number of counted
    /// rows, so a caller batching several sequences can form a global mean.
    pub fn cross_entropy_sum(
        &mut self,
        logits: NodeId,
        targets: &[u32],
        ignore: u32,
    ) -> Result<(NodeId, usize), GraphError> {
        let vl = self.value(logits);
        if vl.rank() != 2 || vl.shape()[0] != targets.len() {
            return Err(ShapeError::Rank {
                op: "cross_entropy_sum",
                expected: 2,
                shape: vl.shape().to_vec(),
            }
            .into());
        }
        let (rows, vocab) = (vl.shape()[0], vl.shape()[1]);
        for &t in targets {
            if t != ignore && t as usize >= vocab {
                return Err(GraphError::IdOutOfRange {
                    id: t,
                    rows: vocab,
                });
            }
        }
        let (loss, count, probs) =
            kernels::cross_entropy_sum(vl.data(), rows, vocab, targets, ignore);
        let aux = Tensor::new(vec![rows, vocab], probs)?;
        let rg = self.needs_grad(&[logits]);
        let id = self.push(
            "cross_entropy_sum",
            Tensor::scalar(F::from_f64(loss)),
            Some(aux),
            Op::CrossEntropySum {
                logits,
                targets: targets.to_vec(),
                ignore,
            },
            rg,
        )?;
        Ok((id, count))
    }

    // ── Backward ────────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Every leaf with `requires_grad`
    /// receives a gradient tensor; leaves not on any path to the loss hold
    /// zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<F>, GraphError> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(GraphError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape().to_vec(), F::one()));

        for i in (0..self.nodes.len()).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue; // leaf gradients stay in their slots
            }
            let Some(g_out) = grads[i].take() else {
                continue;
            };
            if i == loss.0 {
                // keep the seed visible to callers asking for d(loss)/d(loss)
                grads[i] = Some(g_out.clone());
            }
            self.backward_op(i, &g_out, &mut grads)?;
        }

        // untouched requires_grad leaves hold zeros
        for (i, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_op(
        &self,
        i: usize,
        g_out: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) -> Result<(), GraphError> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k) = (va.shape()[0], va.shape()[1]);
                let n = vb.shape()[1];
                if self.requires_grad(*a) {
                    let mut da = vec![F::zero(); m * k];
                    kernels::matmul_a_bt_acc(&mut da, g_out.data(), vb.data(), m, n, k);
                    self.acc(grads, *a, Tensor::new(vec![m, k], da)?)?;
                }
                if self.requires_grad(*b) {
                    let mut db = vec![F::zero(); k * n];
                    kernels::matmul_at_b_acc(&mut db, va.data(), g_out.data(), m, k, n);
                    self.acc(grads, *b, Tensor::new(vec![k, n], db)?)?;
                }
            }
            Op::Add { a, b } => {
                if self.requires_grad(*a) {
                    self.acc(grads, *a, g_out.clone())?;
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, g_out.clone())?;
                }
            }
            Op::Mul { a, b } => {
                for (target, other) in [(*a, *b), (*b, *a)] {
                    if self.requires_grad(target) {
                        let vo = self.value(other);
                        let data = g_out
                            .data()
                            .iter()
                            .zip(vo.data())
                            .map(|(&g, &v)| g * v)
                            .collect();
                        self.acc(grads, target, Tensor::new(vo.shape().to_vec(), data)?)?;
                    }
                }
            }
            Op::Scale { a, factor } => {
                if self.requires_grad(*a) {
                    let f = F::from_f64(*factor);
                    self.acc(grads, *a, g_out.map(|g| g * f))?;
                }
            }
            Op::Sum { a } => {
                if self.requires_grad(*a) {
                    let g = g_out.item();
                    self.acc(grads, *a, Tensor::full(self.value(*a).shape().to_vec(), g))?;
                }
            }
            Op::SoftmaxLastDim { a } => {
                if self.requires_grad(*a) {
                    let y = &node.value;
                    let d = y.last_dim();
                    let mut dx = vec![F::zero(); y.numel()];
                    for r in 0..y.row_count() {
                        let yr = &y.data()[r * d..(r + 1) * d];
                        let gr = &g_out.data()[r * d..(r + 1) * d];
                        let dot = kernels::dot(yr, gr);
                        for ((o, &yv), &gv) in dx[r * d..(r + 1) * d].iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    self.acc(grads, *a, Tensor::new(y.shape().to_vec(), dx)?)?;
                }
            }
            Op::RmsNorm { x, gain } => {
                let (vx, vg) = (self.value(*x), self.value(*gain));
                let d = vx.last_dim();
                let rows = vx.row_count();
                let inv_d = F::from_f64(1.0 / d as f64);
                let eps = F::from_f64(RMSNORM_EPS);
                let mut dx = vec![F::zero(); vx.numel()];
                let mut dg = vec![F::zero(); d];
                for r in 0..rows {
                    let xr = &vx.data()[r * d..(r + 1) * d];
                    let gr = &g_out.data()[r * d..(r + 1) * d];
                    let ms = kernels::dot(xr, xr) * inv_d;
                    let inv_rms = F::one() / (ms + eps).sqrt();
                    // Σ_i dy_i·gain_i·x_i, shared by every dx_j of this row
                    let mut proj = F::zero();
                    for ((&gv, &xv), &gnv) in gr.iter().zip(xr).zip(vg.data()) {
                        proj = proj + gv * gnv * xv;
                    }
                    let coef = inv_rms * inv_rms * inv_rms * inv_d * proj;
                    for (j, o) in dx[r * d..(r + 1) * d].iter_mut().enumerate() {
                        *o = gr[j] * vg.data()[j] * inv_rms - xr[j] * coef;
                    }
                    for (j, o) in dg.iter_mut().enumerate() {
                        *o = *o + gr[j] * xr[j] * inv_rms;
                    }
                }
                if self.requires_grad(*x) {
                    self.acc(grads, *x, Tensor::new(vx.shape().to_vec(), dx)?)?;
                }
                if self.requires_grad(*gain) {
                    self.acc(grads, *gain, Tensor::new(vg.shape().to_vec(), dg)?)?;
                }
            }
            Op::Silu { a } => {
                if self.requires_grad(*a) {
                    let vx = self.value(*a);
                    let data = g_out
                        .data()
                        .iter()
                        .zip(vx.data())
                        .map(|(&g, &x)| {
                            let s = kernels::sigmoid(x);
                            g * s * (F::one() + x * (F::one() - s))
                        })
                        .collect();
                    self.acc(grads, *a, Tensor::new(vx.shape().to_vec(), data)?)?;
                }
            }
            Op::Rope {
                x,
                n_heads,
                head_dim,
                pos_start,
            } => {
                if self.requires_grad(*x) {
                    let mut dx = g_out.clone();
                    let rows = dx.shape()[0];
                    kernels::rope_rows_inverse(dx.data_mut(), rows, *n_heads, *head_dim, *pos_start);
                    self.acc(grads, *x, dx)?;
                }
            }
            Op::Gather { table, ids } => {
                if self.requires_grad(*table) {
                    let vt = self.value(*table);
                    let d = vt.shape()[1];
                    let mut dt = vec![F::zero(); vt.numel()];
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g_out.data()[r * d..(r + 1) * d];
                        let dst = &mut dt[id as usize * d..(id as usize + 1) * d];
                        for (o, &g) in dst.iter_mut().zip(src) {
                            *o = *o + g;
                        }
                    }
                    self.acc(grads, *table, Tensor::new(vt.shape().to_vec(), dt)?)?;
                }
            }
            Op::Attention {
                q,
                keys,
                values,
                n_heads,
                n_kv_heads,
                head_dim,
                causal_offset,
            } => {
                let (vq, vk, vv) = (self.value(*q), self.value(*keys), self.value(*values));
                let seq_q = vq.shape()[0];
                let kv_seq = vk.shape()[0];
                let kv = kernels::KvView::from_rows(
                    vk.data(),
                    vv.data(),
                    kv_seq,
                    *n_kv_heads,
                    *head_dim,
                );
                let probs = node.aux.as_ref().expect("attention saves probs");
                let (dq, dk, dv) = kernels::attn_backward(
                    g_out.data(),
                    vq.data(),
                    seq_q,
                    *n_heads,
                    *head_dim,
                    &kv,
                    *causal_offset,
                    probs.data(),
                );
                if self.requires_grad(*q) {
                    self.acc(grads, *q, Tensor::new(vq.shape().to_vec(), dq)?)?;
                }
                if self.requires_grad(*keys) {
                    self.acc(grads, *keys, Tensor::new(vk.shape().to_vec(), dk)?)?;
                }
                if self.requires_grad(*values) {
                    self.acc(grads, *values, Tensor::new(vv.shape().to_vec(), dv)?)?;
                }
            }
            Op::CrossEntropySum {
                logits,
                targets,
                ignore,
            } => {
                if self.requires_grad(*logits) {
                    let probs = node.aux.as_ref().expect("cross entropy saves probs");
                    let vocab = probs.shape()[1];
                    let g = g_out.item();
                    let mut dl = probs.data().to_vec();
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue; // probs row already zero
                        }
                        dl[r * vocab + t as usize] = dl[r * vocab + t as usize] - F::one();
                    }
                    for v in dl.iter_mut() {
                        *v = *v * g;
                    }
                    self.acc(grads, *logits, Tensor::new(probs.shape().to_vec(), dl)?)?;
                }
            }
        }
        Ok(())
    }

    fn acc(
        &self,
        grads: &mut [Option<Tensor<F>>],
        id: NodeId,
        delta: Tensor<F>,
    ) -> Result<(), GraphError> {
        match &mut grads[id.0] {
            Some(existing) => existing.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }
}
