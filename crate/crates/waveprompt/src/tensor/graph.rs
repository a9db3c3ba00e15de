//! Wengert-tape reverse-mode autodiff over 2-D f64 tensors.
//!
//! A [`Graph`] is built per forward pass: leaves enter via [`Graph::input`]
//! (no gradient) or [`Graph::param`] (gradient leaf), every operation
//! evaluates eagerly and records itself, and [`Graph::backward`] replays
//! the record in reverse to populate gradient buffers. Frozen parameters
//! are ordinary gradient leaves here; freezing is enforced by the
//! optimizer, which keeps the tape paradigm-agnostic.

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Parameter, Tensor};

// ── raw kernels ──────────────────────────────────────────────────────

/// acc += A @ B. A: [m,k], B: [k,n], acc: [m,n]. Four-row blocking keeps
/// B's streamed rows hot across A rows.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], acc: &mut [f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        for p in 0..k {
            let (v0, v1, v2, v3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            let brow = &b[p * n..(p + 1) * n];
            let (c0, rest) = acc[i * n..(i + 4) * n].split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, c3) = rest.split_at_mut(n);
            for j in 0..n {
                let bv = brow[j];
                c0[j] += v0 * bv;
                c1[j] += v1 * bv;
                c2[j] += v2 * bv;
                c3[j] += v3 * bv;
            }
        }
        i += 4;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut acc[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            for (cv, &bv) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cv += av * bv;
            }
        }
        i += 1;
    }
}

/// acc += A @ B^T. A: [m,k], B: [n,k], acc: [m,n]. Row-by-row dot products.
pub(crate) fn matmul_nt_acc(a: &[f64], b: &[f64], acc: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut acc[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            *cv += dot;
        }
    }
}

/// acc += A^T @ B. A: [k,m], B: [k,n], acc: [m,n]. Rank-1 accumulation per
/// shared row keeps both inputs streaming.
pub(crate) fn matmul_tn_acc(a: &[f64], b: &[f64], acc: &mut [f64], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                for (cv, &bv) in acc[i * n..(i + 1) * n].iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
}

fn axpy(acc: &mut [f64], x: &[f64], c: f64) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += c * v;
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

/// Numerically stabilized GELU, exposed for the untaped conv front end.
pub(crate) fn gelu_slice(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        *x = gelu_scalar(*x);
    }
}

// ── tape ─────────────────────────────────────────────────────────────

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    /// a @ b^T
    MatmulNT { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    /// Broadcast-add a row vector to every row of a matrix.
    AddRow { a: NodeId, row: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    ConcatRows { parts: Vec<NodeId> },
    SliceRows { a: NodeId, start: usize, len: usize },
    ConcatCols { parts: Vec<NodeId> },
    SliceCols { a: NodeId, start: usize, len: usize },
    Reshape { a: NodeId },
    Transpose { a: NodeId },
    SoftmaxRows { a: NodeId },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, eps: f64 },
    Gelu { a: NodeId },
    Sum { a: NodeId },
    /// -weight * log softmax(logits)[label]
    CrossEntropy { logits: NodeId, label: usize, weight: f64 },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Vec<f64>,
    needs_grad: bool,
}

/// Per-forward tape: values, the operation record, and gradient buffers.
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(usize, NodeId)>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), bindings: Vec::new() }
    }

    /// Register a stored parameter as a gradient leaf, reusing the node
    /// if this parameter was already bound on this tape.
    pub fn param_of(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&(_, nid)) = self.bindings.iter().find(|(pid, _)| *pid == id.0) {
            return nid;
        }
        let nid = self.param(store.get(id));
        self.bindings.push((id.0, nid));
        nid
    }

    /// Gradients of all bound parameters after a backward pass, indexed
    /// by [`ParamId`] position in the store.
    pub fn param_grads(&self, store_len: usize) -> Vec<Option<Vec<f64>>> {
        let mut out = vec![None; store_len];
        for &(pid, nid) in &self.bindings {
            if let Some(g) = &self.grads[nid.0] {
                out[pid] = Some(g.clone());
            }
        }
        out
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, needs_grad: bool) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node { op, shape, data, needs_grad });
        self.grads.push(None);
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf with no gradient tracking.
    pub fn input(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf, t.shape().to_vec(), t.data().to_vec(), false)
    }

    pub fn input_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> NodeId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.push(Op::Leaf, shape, data, false)
    }

    /// Gradient leaf for a parameter. Frozen parameters register exactly
    /// like trainable ones; the optimizer masks their updates.
    pub fn param(&mut self, p: &Parameter) -> NodeId {
        self.push(Op::Leaf, p.tensor.shape().to_vec(), p.tensor.data().to_vec(), true)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn to_tensor(&self, id: NodeId) -> Tensor {
        Tensor::new(self.shape(id).to_vec(), self.value(id).to_vec()).expect("node invariant")
    }

    /// Gradient of the last backward pass w.r.t. this node, if any flowed.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    fn dims2(&self, id: NodeId, what: &str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(Error::Shape(format!("{what} must be 2-D, got {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    // ── operations ───────────────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: [{m}, {k}] x [{k2}, {n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul { a, b }, vec![m, n], out, ng))
    }

    /// a @ b^T, with b stored row-major as [n, k].
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.dims2(a, "matmul_nt lhs")?;
        let (n, k2) = self.dims2(b, "matmul_nt rhs")?;
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul_nt inner dimensions disagree: [{m}, {k}] x [{n}, {k2}]^T"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatmulNT { a, b }, vec![m, n], out, ng))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "add shapes disagree: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add { a, b }, shape, out, ng))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "add_row lhs")?;
        if self.value(row).len() != n {
            return Err(Error::Shape(format!(
                "add_row: {n}-column matrix vs row of {}",
                self.value(row).len()
            )));
        }
        let mut out = self.value(a).to_vec();
        let rv = self.value(row).to_vec();
        for r in out.chunks_mut(n) {
            for (o, &v) in r.iter_mut().zip(&rv) {
                *o += v;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(Op::AddRow { a, row }, vec![m, n], out, ng))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "mul shapes disagree: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let ng = self.needs(a) || self.needs(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Mul { a, b }, shape, out, ng))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.value(a).iter().map(|x| c * x).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(Op::Scale { a, c }, shape, out, ng)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows of zero parts".into()));
        }
        let (_, n) = self.dims2(parts[0], "concat_rows part")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows part")?;
            if c != n {
                return Err(Error::Shape(format!("concat_rows column mismatch: {n} vs {c}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p));
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatRows { parts: parts.to_vec() }, vec![rows, n], data, ng))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "slice_rows input")?;
        if start + len > m {
            return Err(Error::Shape(format!(
                "slice_rows {start}..{} out of range for {m} rows",
                start + len
            )));
        }
        let data = self.value(a)[start * n..(start + len) * n].to_vec();
        let ng = self.needs(a);
        Ok(self.push(Op::SliceRows { a, start, len }, vec![len, n], data, ng))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols of zero parts".into()));
        }
        let (m, _) = self.dims2(parts[0], "concat_cols part")?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols part")?;
            if r != m {
                return Err(Error::Shape(format!("concat_cols row mismatch: {m} vs {r}")));
            }
            widths.push(c);
            total += c;
        }
        let mut data = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p);
            for i in 0..m {
                data[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatCols { parts: parts.to_vec() }, vec![m, total], data, ng))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "slice_cols input")?;
        if start + len > n {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} out of range for {n} cols",
                start + len
            )));
        }
        let src = self.value(a);
        let mut data = vec![0.0; m * len];
        for i in 0..m {
            data[i * len..(i + 1) * len].copy_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let ng = self.needs(a);
        Ok(self.push(Op::SliceCols { a, start, len }, vec![m, len], data, ng))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).len() {
            return Err(Error::Shape(format!(
                "reshape to {:?} ({} elements) from {} elements",
                shape,
                numel,
                self.value(a).len()
            )));
        }
        let data = self.value(a).to_vec();
        let ng = self.needs(a);
        Ok(self.push(Op::Reshape { a }, shape, data, ng))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "transpose input")?;
        let src = self.value(a);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Op::Transpose { a }, vec![n, m], data, ng))
    }

    /// Row-wise softmax, stabilized by row-max subtraction.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let (m, n) = self.dims2(a, "softmax input")?;
        let src = self.value(a);
        if src.iter().any(|v| v.is_nan()) {
            return Err(Error::Numeric("softmax over NaN input".into()));
        }
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[i * n..(i + 1) * n];
            let mut z = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - mx).exp();
                z += *o;
            }
            for o in out.iter_mut() {
                *o /= z;
            }
        }
        let ng = self.needs(a);
        Ok(self.push(Op::SoftmaxRows { a }, vec![m, n], data, ng))
    }

    /// Per-row normalization to zero mean and unit variance, then a
    /// per-column affine transform.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (m, n) = self.dims2(x, "layer_norm input")?;
        if eps <= 0.0 {
            return Err(Error::Numeric(format!("layer_norm eps must be positive, got {eps}")));
        }
        if self.value(gain).len() != n || self.value(bias).len() != n {
            return Err(Error::Shape(format!(
                "layer_norm affine length {} / {} vs {n} columns",
                self.value(gain).len(),
                self.value(bias).len()
            )));
        }
        let src = self.value(x);
        let g = self.value(gain).to_vec();
        let b = self.value(bias).to_vec();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            let out = &mut data[i * n..(i + 1) * n];
            for j in 0..n {
                out[j] = (row[j] - mean) * inv * g[j] + b[j];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(Op::LayerNorm { x, gain, bias, eps }, vec![m, n], data, ng))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let out: Vec<f64> = self.value(a).iter().map(|&x| gelu_scalar(x)).collect();
        let (shape, ng) = (self.shape(a).to_vec(), self.needs(a));
        self.push(Op::Gelu { a }, shape, out, ng)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).iter().sum();
        let ng = self.needs(a);
        self.push(Op::Sum { a }, vec![1], vec![s], ng)
    }

    /// Weighted cross-entropy of a logit vector against a class index:
    /// `-weight * log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize, weight: f64) -> Result<NodeId> {
        let v = self.value(logits);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("cross_entropy over non-finite logits".into()));
        }
        if label >= v.len() {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} logits",
                v.len()
            )));
        }
        let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
        let loss = -weight * (v[label] - lse);
        let ng = self.needs(logits);
        Ok(self.push(Op::CrossEntropy { logits, label, weight }, vec![1], vec![loss], ng))
    }

    // ── backward ─────────────────────────────────────────────────────

    fn accumulate(&mut self, id: NodeId, contrib: &[f64]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(buf) => axpy(buf, contrib, 1.0),
            None => self.grads[id.0] = Some(contrib.to_vec()),
        }
    }

    fn accumulate_with(&mut self, id: NodeId, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let n = self.nodes[id.0].data.len();
        let buf = self.grads[id.0].get_or_insert_with(|| vec![0.0; n]);
        f(buf);
    }

    /// Populate gradients of `loss` w.r.t. every gradient-tracked node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let dout = match &self.grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[1];
                    if self.needs(a) {
                        // dA = dOut @ B^T
                        let mut da = vec![0.0; m * k];
                        matmul_nt_acc(&dout, self.value(b), &mut da, m, n, k);
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        // dB = A^T @ dOut
                        let mut db = vec![0.0; k * n];
                        matmul_tn_acc(self.value(a), &dout, &mut db, k, m, n);
                        self.accumulate(b, &db);
                    }
                }
                Op::MatmulNT { a, b } => {
                    let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                    let n = self.shape(b)[0];
                    if self.needs(a) {
                        // dA = dOut @ B
                        let mut da = vec![0.0; m * k];
                        matmul_acc(&dout, self.value(b), &mut da, m, n, k);
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        // dB = dOut^T @ A
                        let mut db = vec![0.0; n * k];
                        matmul_tn_acc(&dout, self.value(a), &mut db, n, m, k);
                        self.accumulate(b, &db);
                    }
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &dout);
                    self.accumulate(b, &dout);
                }
                Op::AddRow { a, row } => {
                    self.accumulate(a, &dout);
                    if self.needs(row) {
                        let n = self.value(row).len();
                        let mut dr = vec![0.0; n];
                        for r in dout.chunks(n) {
                            axpy(&mut dr, r, 1.0);
                        }
                        self.accumulate(row, &dr);
                    }
                }
                Op::Mul { a, b } => {
                    if self.needs(a) {
                        let da: Vec<f64> = dout.iter().zip(self.value(b)).map(|(d, v)| d * v).collect();
                        self.accumulate(a, &da);
                    }
                    if self.needs(b) {
                        let db: Vec<f64> = dout.iter().zip(self.value(a)).map(|(d, v)| d * v).collect();
                        self.accumulate(b, &db);
                    }
                }
                Op::Scale { a, c } => {
                    self.accumulate_with(a, |buf| axpy(buf, &dout, c));
                }
                Op::ConcatRows { parts } => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.value(p).len();
                        let chunk = dout[off..off + len].to_vec();
                        self.accumulate(p, &chunk);
                        off += len;
                    }
                }
                Op::SliceRows { a, start, len } => {
                    let n = self.shape(a)[1];
                    self.accumulate_with(a, |buf| {
                        axpy(&mut buf[start * n..(start + len) * n], &dout, 1.0);
                    });
                }
                Op::ConcatCols { parts } => {
                    let m = self.shape(NodeId(idx))[0];
                    let total = self.shape(NodeId(idx))[1];
                    let mut off = 0;
                    for p in parts {
                        let w = self.shape(p)[1];
                        let mut dp = vec![0.0; m * w];
                        for i in 0..m {
                            dp[i * w..(i + 1) * w]
                                .copy_from_slice(&dout[i * total + off..i * total + off + w]);
                        }
                        self.accumulate(p, &dp);
                        off += w;
                    }
                }
                Op::SliceCols { a, start, len } => {
                    let n = self.shape(a)[1];
                    let m = self.shape(a)[0];
                    self.accumulate_with(a, |buf| {
                        for i in 0..m {
                            axpy(
                                &mut buf[i * n + start..i * n + start + len],
                                &dout[i * len..(i + 1) * len],
                                1.0,
                            );
                        }
                    });
                }
                Op::Reshape { a } => {
                    self.accumulate(a, &dout);
                }
                Op::Transpose { a } => {
                    let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
                    let mut da = vec![0.0; m * n];
                    for j in 0..n {
                        for i in 0..m {
                            da[i * n + j] = dout[j * m + i];
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::SoftmaxRows { a } => {
                    let (m, n) = (self.shape(a)[0], self.shape(a)[1]);
                    let s = &self.nodes[idx].data;
                    let mut da = vec![0.0; m * n];
                    for i in 0..m {
                        let srow = &s[i * n..(i + 1) * n];
                        let drow = &dout[i * n..(i + 1) * n];
                        let dot: f64 = srow.iter().zip(drow).map(|(x, y)| x * y).sum();
                        for j in 0..n {
                            da[i * n + j] = srow[j] * (drow[j] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (m, n) = (self.shape(x)[0], self.shape(x)[1]);
                    let src = self.value(x).to_vec();
                    let g = self.value(gain).to_vec();
                    let nf = n as f64;
                    let mut dx = vec![0.0; m * n];
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        let row = &src[i * n..(i + 1) * n];
                        let drow = &dout[i * n..(i + 1) * n];
                        let mean = row.iter().sum::<f64>() / nf;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf;
                        let inv = 1.0 / (var + eps).sqrt();
                        // x̂ and the two row means the VJP needs
                        let xh: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                        let dxh: Vec<f64> = drow.iter().zip(&g).map(|(d, gv)| d * gv).collect();
                        let mean_dxh = dxh.iter().sum::<f64>() / nf;
                        let mean_dxh_xh =
                            dxh.iter().zip(&xh).map(|(a2, b2)| a2 * b2).sum::<f64>() / nf;
                        for j in 0..n {
                            dx[i * n + j] = inv * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                            dg[j] += drow[j] * xh[j];
                            db[j] += drow[j];
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(gain, &dg);
                    self.accumulate(bias, &db);
                }
                Op::Gelu { a } => {
                    let da: Vec<f64> = dout
                        .iter()
                        .zip(self.value(a))
                        .map(|(d, &x)| d * gelu_grad_scalar(x))
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Sum { a } => {
                    let c = dout[0];
                    self.accumulate_with(a, |buf| {
                        for v in buf.iter_mut() {
                            *v += c;
                        }
                    });
                }
                Op::CrossEntropy { logits, label, weight } => {
                    let v = self.value(logits);
                    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = v.iter().map(|x| (x - mx).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    let c = weight * dout[0];
                    let da: Vec<f64> = exps
                        .iter()
                        .enumerate()
                        .map(|(j, e)| c * (e / z - if j == label { 1.0 } else { 0.0 }))
                        .collect();
                    self.accumulate(logits, &da);
                }
            }
        }
        Ok(())
    }
}
