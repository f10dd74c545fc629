//! Reverse-mode gradient tape.
//!
//! A [`Tape`] records every operation of a forward pass as a node; calling
//! [`Tape::backward`] on a scalar loss walks the record in reverse and
//! accumulates gradients into every node marked as requiring them. Values
//! are held in f64 while recorded; f32 [`Tensor`]s convert at the boundary.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// A[m×k] @ B[k×n]
    MatMul { a: NodeId, b: NodeId },
    /// X[m×k] @ W[n×k]^T — weight rows are output channels.
    Linear { x: NodeId, w: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    Silu { x: NodeId },
    RmsNorm { x: NodeId, gain: NodeId },
    Rope { x: NodeId, n_heads: usize, theta: f64 },
    CausalAttention {
        q: NodeId,
        k: NodeId,
        v: NodeId,
        n_heads: usize,
    },
    Embedding { table: NodeId, ids: Vec<usize> },
    LogSoftmaxRows { x: NodeId },
    /// Mean over masked positions of `-log softmax(logits)[t, targets[t]]`.
    MaskedCeMean {
        logits: NodeId,
        targets: Vec<usize>,
        mask: Vec<bool>,
    },
    /// softplus(-beta * x) for scalar x, i.e. -log sigmoid(beta * x).
    NegLogSigmoid { x: NodeId, beta: f64 },
    /// Sum of every entry, to a scalar.
    SumAll { x: NodeId },
    /// Inverted dropout; mask entries are 0 or 1/keep_prob.
    Dropout { x: NodeId, mask: Vec<f64> },
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    grad: Option<Vec<f64>>,
    requires: bool,
    /// Saved intermediates some backward rules need (attention probabilities,
    /// per-row inverse rms).
    aux: Option<Vec<f64>>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, requires: bool, op: Op) -> NodeId {
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
            requires,
            aux: None,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].data[0]
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Copy a node's accumulated gradient into the tensor it was created
    /// from, filling its `grad` buffer.
    pub fn write_grad_into(&self, id: NodeId, target: &mut Tensor) -> Result<()> {
        let node = &self.nodes[id.0];
        if node.shape != target.shape() {
            return Err(Error::DimensionMismatch {
                op: "write_grad_into",
                left: node.shape.clone(),
                right: target.shape().to_vec(),
            });
        }
        let grad = node
            .grad
            .as_ref()
            .ok_or_else(|| Error::InvalidData("node has no gradient".into()))?;
        target.grad = Some(grad.iter().map(|&v| v as f32).collect());
        Ok(())
    }

    pub fn value_f32(&self, id: NodeId) -> Vec<f32> {
        self.nodes[id.0].data.iter().map(|&v| v as f32).collect()
    }

    /// Copy a node's value out as a [`Tensor`].
    pub fn tensor_value(&self, id: NodeId) -> Result<Tensor> {
        Tensor::new(self.nodes[id.0].shape.clone(), self.value_f32(id))
    }

    // ── leaves ──────────────────────────────────────────────────────

    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidData(format!(
                "leaf shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tape leaf value {bad}")));
        }
        Ok(self.push(data, shape, false, Op::Leaf))
    }

    /// Frozen input: participates in the forward pass, receives no gradient.
    pub fn leaf_tensor(&mut self, t: &Tensor) -> NodeId {
        let data = t.data().iter().map(|&v| v as f64).collect();
        self.push(data, t.shape().to_vec(), false, Op::Leaf)
    }

    /// Trainable input: gradient is accumulated during backward.
    pub fn param_tensor(&mut self, t: &Tensor) -> NodeId {
        let data = t.data().iter().map(|&v| v as f64).collect();
        self.push(data, t.shape().to_vec(), true, Op::Leaf)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.push(vec![v], vec![1], false, Op::Leaf)
    }

    // ── operations ──────────────────────────────────────────────────

    fn check_2d(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::DimensionMismatch {
                op,
                left: s.to_vec(),
                right: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, ka) = self.check_2d(a, "matmul")?;
        let (kb, n) = self.check_2d(b, "matmul")?;
        if ka != kb {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let data = kernels::matmul(self.value(a), self.value(b), m, ka, n);
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(data, vec![m, n], req, Op::MatMul { a, b }))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (m, kx) = self.check_2d(x, "linear")?;
        let (n, kw) = self.check_2d(w, "linear")?;
        if kx != kw {
            return Err(Error::DimensionMismatch {
                op: "linear",
                left: self.shape(x).to_vec(),
                right: self.shape(w).to_vec(),
            });
        }
        let data = kernels::matmul_nt(self.value(x), self.value(w), m, kx, n);
        let req = self.requires(x) || self.requires(w);
        Ok(self.push(data, vec![m, n], req, Op::Linear { x, w }))
    }

    fn elementwise_pair(&self, a: NodeId, b: NodeId, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, "add")?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let req = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(data, shape, req, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, "sub")?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x - y)
            .collect();
        let req = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(data, shape, req, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.elementwise_pair(a, b, "mul")?;
        let data = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let req = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(data, shape, req, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let data = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let req = self.requires(x);
        self.push(data, shape, req, Op::Scale { x, c })
    }

    pub fn silu(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).iter().map(|&v| kernels::silu(v)).collect();
        let shape = self.shape(x).to_vec();
        let req = self.requires(x);
        self.push(data, shape, req, Op::Silu { x })
    }

    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId, eps: f64) -> Result<NodeId> {
        let d = *self.shape(gain).last().unwrap();
        if self.shape(gain).len() != 1 || !self.value(x).len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                op: "rms_norm",
                left: self.shape(x).to_vec(),
                right: self.shape(gain).to_vec(),
            });
        }
        let (data, inv) = kernels::rms_norm_fwd(self.value(x), self.value(gain), d, eps);
        let shape = self.shape(x).to_vec();
        let req = self.requires(x) || self.requires(gain);
        let id = self.push(data, shape, req, Op::RmsNorm { x, gain });
        self.nodes[id.0].aux = Some(inv);
        Ok(id)
    }

    pub fn rope(&mut self, x: NodeId, n_heads: usize, theta: f64) -> Result<NodeId> {
        let (t_len, d) = self.check_2d(x, "rope")?;
        if d % n_heads != 0 || !(d / n_heads).is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "rope: width {d} not divisible into {n_heads} heads of even size"
            )));
        }
        let data = kernels::rope_fwd(self.value(x), t_len, n_heads, theta);
        let req = self.requires(x);
        Ok(self.push(data, vec![t_len, d], req, Op::Rope { x, n_heads, theta }))
    }

    pub fn causal_attention(
        &mut self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        n_heads: usize,
    ) -> Result<NodeId> {
        let (t_len, d) = self.check_2d(q, "causal_attention")?;
        self.elementwise_pair(q, k, "causal_attention")?;
        self.elementwise_pair(q, v, "causal_attention")?;
        if d % n_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "causal_attention: width {d} not divisible by {n_heads} heads"
            )));
        }
        let (data, probs) =
            kernels::causal_attention_fwd(self.value(q), self.value(k), self.value(v), t_len, n_heads);
        let req = self.requires(q) || self.requires(k) || self.requires(v);
        let id = self.push(data, vec![t_len, d], req, Op::CausalAttention { q, k, v, n_heads });
        self.nodes[id.0].aux = Some(probs);
        Ok(id)
    }

    pub fn embedding(&mut self, table: NodeId, ids: &[u32]) -> Result<NodeId> {
        let (vocab, d) = self.check_2d(table, "embedding")?;
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            let id = id as usize;
            if id >= vocab {
                return Err(Error::IndexOutOfRange {
                    context: "embedding lookup".into(),
                    index: id,
                    bound: vocab,
                });
            }
            data.extend_from_slice(&self.value(table)[id * d..(id + 1) * d]);
        }
        let req = self.requires(table);
        Ok(self.push(
            data,
            vec![ids.len(), d],
            req,
            Op::Embedding {
                table,
                ids: ids.iter().map(|&i| i as usize).collect(),
            },
        ))
    }

    pub fn log_softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.check_2d(x, "log_softmax_rows")?;
        let data = kernels::log_softmax_rows(self.value(x), rows, cols);
        let req = self.requires(x);
        Ok(self.push(data, vec![rows, cols], req, Op::LogSoftmaxRows { x }))
    }

    /// Mean over masked positions of `-log P(targets[t] | logits row t)`.
    pub fn masked_ce_mean(
        &mut self,
        logits: NodeId,
        targets: &[u32],
        mask: &[bool],
    ) -> Result<NodeId> {
        let (rows, cols) = self.check_2d(logits, "cross_entropy")?;
        if targets.len() != rows || mask.len() != rows {
            return Err(Error::InvalidData(format!(
                "cross_entropy: {} logit rows, {} targets, {} mask entries",
                rows,
                targets.len(),
                mask.len()
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::EmptyLoss("all mask entries are false".into()));
        }
        let mut total = 0.0;
        for t in 0..rows {
            if !mask[t] {
                continue;
            }
            let target = targets[t] as usize;
            if target >= cols {
                return Err(Error::IndexOutOfRange {
                    context: "cross_entropy target".into(),
                    index: target,
                    bound: cols,
                });
            }
            let row = &self.value(logits)[t * cols..(t + 1) * cols];
            total += kernels::logsumexp(row) - row[target];
        }
        let data = vec![total / count as f64];
        let req = self.requires(logits);
        Ok(self.push(
            data,
            vec![1],
            req,
            Op::MaskedCeMean {
                logits,
                targets: targets.iter().map(|&t| t as usize).collect(),
                mask: mask.to_vec(),
            },
        ))
    }

    /// -log sigmoid(beta * x) for a scalar node.
    pub fn neg_log_sigmoid(&mut self, x: NodeId, beta: f64) -> Result<NodeId> {
        if self.value(x).len() != 1 {
            return Err(Error::InvalidData(
                "neg_log_sigmoid expects a scalar node".into(),
            ));
        }
        let v = kernels::softplus(-beta * self.scalar_value(x));
        let req = self.requires(x);
        Ok(self.push(vec![v], vec![1], req, Op::NegLogSigmoid { x, beta }))
    }

    /// Reduce every entry to one scalar by summation.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let total: f64 = self.value(x).iter().sum();
        let req = self.requires(x);
        self.push(vec![total], vec![1], req, Op::SumAll { x })
    }

    /// Inverted dropout with a caller-supplied keep mask (entries 0 or
    /// 1/keep_prob), so the same mask can be replayed deterministically.
    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        if mask.len() != self.value(x).len() {
            return Err(Error::InvalidData(format!(
                "dropout mask length {} != input length {}",
                mask.len(),
                self.value(x).len()
            )));
        }
        let data = self
            .value(x)
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let shape = self.shape(x).to_vec();
        let req = self.requires(x);
        Ok(self.push(data, shape, req, Op::Dropout { x, mask }))
    }

    // ── backward ────────────────────────────────────────────────────

    fn accumulate(&mut self, id: NodeId, contribution: &[f64]) {
        if !self.nodes[id.0].requires {
            return;
        }
        let n = self.nodes[id.0].data.len();
        let grad = self.nodes[id.0].grad.get_or_insert_with(|| vec![0.0; n]);
        for (g, c) in grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    fn grad_of(&self, id: NodeId) -> Option<Vec<f64>> {
        self.nodes[id.0].grad.clone()
    }

    /// Run reverse-mode accumulation from a scalar root.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root.0].data.len() != 1 {
            return Err(Error::InvalidData(
                "backward root must be a scalar".into(),
            ));
        }
        if !self.nodes[root.0].data[0].is_finite() {
            return Err(Error::NonFinite("loss value".into()));
        }
        let n = self.nodes[root.0].data.len();
        self.nodes[root.0].grad = Some(vec![1.0; n]);

        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires {
                continue;
            }
            let Some(gy) = self.grad_of(NodeId(i)) else {
                continue;
            };
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}

                Op::MatMul { a, b } => {
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[1];
                    if self.requires(a) {
                        // dA = dC @ B^T
                        let da = kernels::matmul_nt(&gy, self.value(b), m, n, k);
                        self.accumulate(a, &da);
                    }
                    if self.requires(b) {
                        // dB = A^T @ dC
                        let db = kernels::matmul_tn(self.value(a), &gy, m, k, n);
                        self.accumulate(b, &db);
                    }
                }

                Op::Linear { x, w } => {
                    let (m, k) = (self.shape(x)[0], self.shape(x)[1]);
                    let n = self.shape(w)[0];
                    if self.requires(x) {
                        // dX = dY @ W
                        let dx = kernels::matmul(&gy, self.value(w), m, n, k);
                        self.accumulate(x, &dx);
                    }
                    if self.requires(w) {
                        // dW = dY^T @ X
                        let dw = kernels::matmul_tn(&gy, self.value(x), m, n, k);
                        self.accumulate(w, &dw);
                    }
                }

                Op::Add { a, b } => {
                    self.accumulate(a, &gy);
                    self.accumulate(b, &gy);
                }

                Op::Sub { a, b } => {
                    self.accumulate(a, &gy);
                    let neg: Vec<f64> = gy.iter().map(|g| -g).collect();
                    self.accumulate(b, &neg);
                }

                Op::Mul { a, b } => {
                    if self.requires(a) {
                        let da: Vec<f64> = gy.iter().zip(self.value(b)).map(|(g, v)| g * v).collect();
                        self.accumulate(a, &da);
                    }
                    if self.requires(b) {
                        let db: Vec<f64> = gy.iter().zip(self.value(a)).map(|(g, v)| g * v).collect();
                        self.accumulate(b, &db);
                    }
                }

                Op::Scale { x, c } => {
                    let dx: Vec<f64> = gy.iter().map(|g| g * c).collect();
                    self.accumulate(x, &dx);
                }

                Op::Silu { x } => {
                    let dx: Vec<f64> = gy
                        .iter()
                        .zip(self.value(x))
                        .map(|(g, &v)| g * kernels::silu_deriv(v))
                        .collect();
                    self.accumulate(x, &dx);
                }

                Op::RmsNorm { x, gain } => {
                    let d = self.shape(gain)[0];
                    let inv = self.nodes[i].aux.clone().expect("rms_norm aux");
                    let mut dx = vec![0.0; self.value(x).len()];
                    let mut dgain = vec![0.0; d];
                    kernels::rms_norm_bwd(
                        &gy,
                        self.value(x),
                        self.value(gain),
                        &inv,
                        d,
                        &mut dx,
                        &mut dgain,
                    );
                    self.accumulate(x, &dx);
                    self.accumulate(gain, &dgain);
                }

                Op::Rope { x, n_heads, theta } => {
                    let t_len = self.shape(x)[0];
                    let dx = kernels::rope_bwd(&gy, t_len, n_heads, theta);
                    self.accumulate(x, &dx);
                }

                Op::CausalAttention { q, k, v, n_heads } => {
                    let t_len = self.shape(q)[0];
                    let probs = self.nodes[i].aux.clone().expect("attention aux");
                    let mut dq = vec![0.0; self.value(q).len()];
                    let mut dk = vec![0.0; self.value(k).len()];
                    let mut dv = vec![0.0; self.value(v).len()];
                    kernels::causal_attention_bwd(
                        &gy,
                        self.value(q),
                        self.value(k),
                        self.value(v),
                        &probs,
                        t_len,
                        n_heads,
                        &mut dq,
                        &mut dk,
                        &mut dv,
                    );
                    self.accumulate(q, &dq);
                    self.accumulate(k, &dk);
                    self.accumulate(v, &dv);
                }

                Op::Embedding { table, ids } => {
                    if self.requires(table) {
                        let d = self.shape(table)[1];
                        let mut dt = vec![0.0; self.value(table).len()];
                        for (row, &id) in ids.iter().enumerate() {
                            for c in 0..d {
                                dt[id * d + c] += gy[row * d + c];
                            }
                        }
                        self.accumulate(table, &dt);
                    }
                }

                Op::LogSoftmaxRows { x } => {
                    // d/dx_j = g_j - softmax_j * sum(g)
                    let (rows, cols) = (self.shape(x)[0], self.shape(x)[1]);
                    let out = &self.nodes[i].data;
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let gr = &gy[r * cols..(r + 1) * cols];
                        let orow = &out[r * cols..(r + 1) * cols];
                        let gsum: f64 = gr.iter().sum();
                        for c in 0..cols {
                            dx[r * cols + c] = gr[c] - orow[c].exp() * gsum;
                        }
                    }
                    self.accumulate(x, &dx);
                }

                Op::MaskedCeMean {
                    logits,
                    targets,
                    mask,
                } => {
                    let (rows, cols) = (self.shape(logits)[0], self.shape(logits)[1]);
                    let count = mask.iter().filter(|&&m| m).count() as f64;
                    let g = gy[0] / count;
                    let mut dl = vec![0.0; rows * cols];
                    for t in 0..rows {
                        if !mask[t] {
                            continue;
                        }
                        let row = &self.value(logits)[t * cols..(t + 1) * cols];
                        let lse = kernels::logsumexp(row);
                        for c in 0..cols {
                            let softmax = (row[c] - lse).exp();
                            let onehot = if c == targets[t] { 1.0 } else { 0.0 };
                            dl[t * cols + c] = g * (softmax - onehot);
                        }
                    }
                    self.accumulate(logits, &dl);
                }

                Op::NegLogSigmoid { x, beta } => {
                    // d/dx softplus(-beta x) = -beta * sigmoid(-beta x)
                    let v = self.scalar_value(x);
                    let dx = vec![gy[0] * (-beta) * kernels::sigmoid(-beta * v)];
                    self.accumulate(x, &dx);
                }

                Op::SumAll { x } => {
                    let dx = vec![gy[0]; self.value(x).len()];
                    self.accumulate(x, &dx);
                }

                Op::Dropout { x, mask } => {
                    let dx: Vec<f64> = gy.iter().zip(&mask).map(|(g, m)| g * m).collect();
                    self.accumulate(x, &dx);
                }
            }
        }
        Ok(())
    }
}
