//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Values are computed eagerly as operations are recorded, so a tape after
//! construction holds the full forward pass. `backward` walks the nodes in
//! reverse creation order (a valid reverse topological order, since an
//! operation can only reference earlier nodes) and accumulates gradients by
//! summation, so reusing a node twice contributes twice to its gradient.
//!
//! Every operation validates shapes up front and scans its output for
//! non-finite values; NaN or infinity anywhere is an error, never silent.

use std::sync::Arc;

use rand::Rng;

use crate::nncore::tensor::Tensor;
use crate::nncore::{NnError, NnResult};
use crate::scalar::Scalar;

pub type NodeId = usize;

enum Stored<S> {
    Owned(Tensor<S>),
    Shared(Arc<Tensor<S>>),
}

impl<S> Stored<S> {
    fn tensor(&self) -> &Tensor<S> {
        match self {
            Stored::Owned(t) => t,
            Stored::Shared(t) => t,
        }
    }
}

enum Op<S> {
    Leaf,
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    /// Elementwise addition; `b` may also be a single row broadcast over
    /// the rows of `a`.
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Tanh {
        x: NodeId,
    },
    Softmax {
        x: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
        axis: usize,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    Lookup {
        matrix: NodeId,
        indices: Vec<usize>,
    },
    /// `mask` is `None` in evaluation mode (identity); in training mode it
    /// holds the inverted-dropout mask with kept entries already scaled by
    /// `1/(1-p)`.
    Dropout {
        x: NodeId,
        mask: Option<Vec<S>>,
    },
    /// Mean cross-entropy over rows of `logits`; `probs` caches the row
    /// softmax for the backward pass.
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Vec<S>,
    },
    SumAll {
        x: NodeId,
    },
    Scale {
        x: NodeId,
        c: S,
    },
}

struct Node<S> {
    value: Stored<S>,
    op: Op<S>,
    needs_grad: bool,
}

pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    training: bool,
}

/// Per-node gradients produced by [`Tape::backward`]. Nodes outside the
/// loss's dependency cone, and nodes that do not require gradients, hold
/// `None`.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<S>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<S>> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

// Raw matrix kernels. `mm_nn` is C += A·B, `mm_nt` is C += A·Bᵀ and `mm_tn`
// is C += Aᵀ·B, each on row-major buffers.
fn mm_nn<S: Scalar>(a: &[S], b: &[S], out: &mut [S], n: usize, k: usize, m: usize) {
    for i in 0..n {
        for p in 0..k {
            let av = a[i * k + p];
            if av == S::zero() {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
}

fn mm_nt<S: Scalar>(a: &[S], b: &[S], out: &mut [S], n: usize, k: usize, m: usize) {
    // a: [n,k], b: [m,k], out: [n,m]
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * m + j] += acc;
        }
    }
}

fn mm_tn<S: Scalar>(a: &[S], b: &[S], out: &mut [S], n: usize, k: usize, m: usize) {
    // a: [k,n], b: [k,m], out: [n,m]
    for p in 0..k {
        let arow = &a[p * n..(p + 1) * n];
        let brow = &b[p * m..(p + 1) * m];
        for i in 0..n {
            let av = arow[i];
            if av == S::zero() {
                continue;
            }
            let orow = &mut out[i * m..(i + 1) * m];
            for j in 0..m {
                orow[j] += av * brow[j];
            }
        }
    }
}

fn stable_sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new(training: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            training,
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<S> {
        self.nodes[id].value.tensor()
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Stored::Owned(value),
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn check_finite(&self, id: NodeId, op: &'static str) -> NnResult<NodeId> {
        if self.value(id).all_finite() {
            Ok(id)
        } else {
            Err(NnError::NonFiniteValue { op })
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Records an input tensor. Whether it participates in gradients is
    /// taken from the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor<S>) -> NodeId {
        let needs = t.requires_grad();
        self.nodes.push(Node {
            value: Stored::Owned(t),
            op: Op::Leaf,
            needs_grad: needs,
        });
        self.nodes.len() - 1
    }

    /// Records a shared parameter without copying its buffer.
    pub fn leaf_shared(&mut self, t: Arc<Tensor<S>>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Stored::Shared(t),
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        self.nodes.len() - 1
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NnResult<NodeId> {
        let (ar, ac) = (self.value(a).rows(), self.value(a).cols());
        let (br, bc) = (self.value(b).rows(), self.value(b).cols());
        if ac != br {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{ar}, {ac}] x [{br}, {bc}]"),
            });
        }
        let mut out = Tensor::zeros(ar, bc);
        mm_nn(
            self.value(a).data(),
            self.value(b).data(),
            out.data_mut(),
            ar,
            ac,
            bc,
        );
        let needs = self.needs(a) || self.needs(b);
        let id = self.push(out, Op::Matmul { a, b }, needs);
        self.check_finite(id, "matmul")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NnResult<NodeId> {
        let (ar, ac) = (self.value(a).rows(), self.value(a).cols());
        let (br, bc) = (self.value(b).rows(), self.value(b).cols());
        let broadcast = br == 1 && bc == ac && ar >= 1;
        if !(ar == br && ac == bc || broadcast) {
            return Err(NnError::ShapeMismatch {
                op: "add",
                detail: format!("[{ar}, {ac}] + [{br}, {bc}]"),
            });
        }
        let mut out = self.value(a).clone().with_grad(false);
        {
            let bd = self.value(b).data();
            let od = out.data_mut();
            if ar == br && ac == bc {
                for (o, &bv) in od.iter_mut().zip(bd) {
                    *o += bv;
                }
            } else {
                for r in 0..ar {
                    for c in 0..ac {
                        od[r * ac + c] += bd[c];
                    }
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        let id = self.push(out, Op::Add { a, b }, needs);
        self.check_finite(id, "add")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NnResult<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::ShapeMismatch {
                op: "mul",
                detail: format!("{:?} * {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let mut out = self.value(a).clone().with_grad(false);
        for (o, &bv) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= bv;
        }
        let needs = self.needs(a) || self.needs(b);
        let id = self.push(out, Op::Mul { a, b }, needs);
        self.check_finite(id, "mul")
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NnResult<NodeId> {
        let out = self.value(x).map(stable_sigmoid);
        let needs = self.needs(x);
        let id = self.push(out, Op::Sigmoid { x }, needs);
        self.check_finite(id, "sigmoid")
    }

    pub fn tanh(&mut self, x: NodeId) -> NnResult<NodeId> {
        let out = self.value(x).map(|v| v.tanh());
        let needs = self.needs(x);
        let id = self.push(out, Op::Tanh { x }, needs);
        self.check_finite(id, "tanh")
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NnResult<NodeId> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if cols == 0 {
            return Err(NnError::ShapeMismatch {
                op: "softmax",
                detail: "zero columns".to_string(),
            });
        }
        let mut out = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let row = t.row(r);
            let mut mx = row[0];
            for &v in row {
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = S::zero();
            for (c, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                out.set(r, c, e);
                sum += e;
            }
            for c in 0..cols {
                let v = out.get(r, c) / sum;
                out.set(r, c, v);
            }
        }
        let needs = self.needs(x);
        let id = self.push(out, Op::Softmax { x }, needs);
        self.check_finite(id, "softmax")
    }

    /// Concatenation along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NnResult<NodeId> {
        if parts.is_empty() || axis > 1 {
            return Err(NnError::ShapeMismatch {
                op: "concat",
                detail: format!("{} parts, axis {axis}", parts.len()),
            });
        }
        let first = self.value(parts[0]).shape();
        let fixed = 1 - axis;
        for &p in parts {
            if self.value(p).shape()[fixed] != first[fixed] {
                return Err(NnError::ShapeMismatch {
                    op: "concat",
                    detail: format!("{:?} vs {:?} on axis {axis}", self.value(p).shape(), first),
                });
            }
        }
        let out = if axis == 0 {
            let cols = first[1];
            let rows: usize = parts.iter().map(|&p| self.value(p).rows()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for &p in parts {
                data.extend_from_slice(self.value(p).data());
            }
            Tensor::from_vec(rows, cols, data)
        } else {
            let rows = first[0];
            let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::from_vec(rows, cols, data)
        };
        let needs = parts.iter().any(|&p| self.needs(p));
        let id = self.push(
            out,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            needs,
        );
        self.check_finite(id, "concat")
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> NnResult<NodeId> {
        let t = self.value(x);
        if start + len > t.rows() || len == 0 {
            return Err(NnError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {}..{} of [{}, {}]", start, start + len, t.rows(), t.cols()),
            });
        }
        let cols = t.cols();
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(len, cols, data);
        let needs = self.needs(x);
        let id = self.push(out, Op::SliceRows { x, start }, needs);
        self.check_finite(id, "slice_rows")
    }

    /// Gathers `indices` rows of `matrix`. The backward pass scatter-adds
    /// into the matrix gradient, so repeated indices accumulate.
    pub fn embedding_lookup(&mut self, matrix: NodeId, indices: &[usize]) -> NnResult<NodeId> {
        let m = self.value(matrix);
        let (rows, cols) = (m.rows(), m.cols());
        if indices.is_empty() {
            return Err(NnError::ShapeMismatch {
                op: "embedding_lookup",
                detail: "empty index list".to_string(),
            });
        }
        for &i in indices {
            if i >= rows {
                return Err(NnError::ShapeMismatch {
                    op: "embedding_lookup",
                    detail: format!("index {i} out of range for {rows} rows"),
                });
            }
        }
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            data.extend_from_slice(m.row(i));
        }
        let out = Tensor::from_vec(indices.len(), cols, data);
        let needs = self.needs(matrix);
        let id = self.push(
            out,
            Op::Lookup {
                matrix,
                indices: indices.to_vec(),
            },
            needs,
        );
        self.check_finite(id, "embedding_lookup")
    }

    /// Inverted dropout: in training mode each element is kept with
    /// probability `1 - p` and scaled by `1/(1-p)`; in evaluation mode the
    /// op is the identity and consumes no randomness. Mask entries are drawn
    /// in row-major element order.
    pub fn dropout<R: Rng>(&mut self, x: NodeId, p: f64, rng: &mut R) -> NnResult<NodeId> {
        assert!((0.0..1.0).contains(&p), "dropout probability must be in [0, 1)");
        if !self.training || p == 0.0 {
            let out = self.value(x).clone().with_grad(false);
            let needs = self.needs(x);
            let id = self.push(out, Op::Dropout { x, mask: None }, needs);
            return self.check_finite(id, "dropout");
        }
        let keep_scale = S::lit(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..self.value(x).len())
            .map(|_| {
                if rng.gen::<f64>() >= p {
                    keep_scale
                } else {
                    S::zero()
                }
            })
            .collect();
        let t = self.value(x);
        let mut out = Tensor::zeros(t.rows(), t.cols());
        for (o, (&v, &m)) in out.data_mut().iter_mut().zip(t.data().iter().zip(&mask)) {
            *o = v * m;
        }
        let needs = self.needs(x);
        let id = self.push(out, Op::Dropout { x, mask: Some(mask) }, needs);
        self.check_finite(id, "dropout")
    }

    /// Mean cross-entropy between row softmax of `logits` and the target
    /// class index of each row. Output is a `[1, 1]` scalar.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> NnResult<NodeId> {
        let t = self.value(logits);
        let (rows, cols) = (t.rows(), t.cols());
        if targets.len() != rows {
            return Err(NnError::ShapeMismatch {
                op: "cross_entropy",
                detail: format!("{} targets for {rows} rows", targets.len()),
            });
        }
        for &c in targets {
            if c >= cols {
                return Err(NnError::ShapeMismatch {
                    op: "cross_entropy",
                    detail: format!("target {c} out of range for {cols} classes"),
                });
            }
        }
        let mut probs = vec![S::zero(); rows * cols];
        let mut loss = S::zero();
        for r in 0..rows {
            let row = t.row(r);
            let mut mx = row[0];
            for &v in row {
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = S::zero();
            for c in 0..cols {
                let e = (row[c] - mx).exp();
                probs[r * cols + c] = e;
                sum += e;
            }
            for c in 0..cols {
                probs[r * cols + c] /= sum;
            }
            // loss_r = log-sum-exp(row) - row[target]
            loss = loss + sum.ln() + mx - row[targets[r]];
        }
        loss /= S::lit(rows as f64);
        let out = Tensor::from_vec(1, 1, vec![loss]);
        let needs = self.needs(logits);
        let id = self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            needs,
        );
        self.check_finite(id, "cross_entropy")
    }

    pub fn sum_all(&mut self, x: NodeId) -> NnResult<NodeId> {
        let mut acc = S::zero();
        for &v in self.value(x).data() {
            acc += v;
        }
        let out = Tensor::from_vec(1, 1, vec![acc]);
        let needs = self.needs(x);
        let id = self.push(out, Op::SumAll { x }, needs);
        self.check_finite(id, "sum_all")
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NnResult<NodeId> {
        let cs = S::lit(c);
        let out = self.value(x).map(|v| v * cs);
        let needs = self.needs(x);
        let id = self.push(out, Op::Scale { x, c: cs }, needs);
        self.check_finite(id, "scale")
    }

    /// Backpropagates from `loss` (which must be a `[1, 1]` scalar) and
    /// returns per-node gradients. Gradients of reused nodes accumulate by
    /// summation.
    pub fn backward(&self, loss: NodeId) -> NnResult<Gradients<S>> {
        if self.value(loss).shape() != [1, 1] {
            return Err(NnError::ShapeMismatch {
                op: "backward",
                detail: format!("loss must be [1, 1], got {:?}", self.value(loss).shape()),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Tensor::from_vec(1, 1, vec![S::one()]));
        for id in (0..=loss).rev() {
            if grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Drop gradients of intermediate and non-gradient nodes.
        for (id, slot) in grads.iter_mut().enumerate() {
            if !self.nodes[id].needs_grad {
                *slot = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<S>>], id: NodeId, delta: Tensor<S>) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut grads[id] {
            Some(existing) => {
                for (e, &d) in existing.data_mut().iter_mut().zip(delta.data()) {
                    *e += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn backward_node(&self, id: NodeId, g: &Tensor<S>, grads: &mut [Option<Tensor<S>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    // dA = dC · Bᵀ
                    let mut da = Tensor::zeros(av.rows(), av.cols());
                    mm_nt(g.data(), bv.data(), da.data_mut(), g.rows(), g.cols(), bv.rows());
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    // dB = Aᵀ · dC
                    let mut db = Tensor::zeros(bv.rows(), bv.cols());
                    mm_tn(av.data(), g.data(), db.data_mut(), av.cols(), av.rows(), g.cols());
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    self.accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    let bv = self.value(*b);
                    if bv.shape() == g.shape() {
                        self.accumulate(grads, *b, g.clone());
                    } else {
                        // Broadcast row: gradient is the column sum.
                        let mut db = Tensor::zeros(1, bv.cols());
                        for r in 0..g.rows() {
                            for c in 0..g.cols() {
                                let v = db.get(0, c) + g.get(r, c);
                                db.set(0, c, v);
                            }
                        }
                        self.accumulate(grads, *b, db);
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    let mut da = self.value(*b).clone().with_grad(false);
                    for (d, &gv) in da.data_mut().iter_mut().zip(g.data()) {
                        *d *= gv;
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = self.value(*a).clone().with_grad(false);
                    for (d, &gv) in db.data_mut().iter_mut().zip(g.data()) {
                        *d *= gv;
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Sigmoid { x } => {
                if self.needs(*x) {
                    let y = self.value(id);
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for ((d, &yv), &gv) in dx.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                        *d = gv * yv * (S::one() - yv);
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Tanh { x } => {
                if self.needs(*x) {
                    let y = self.value(id);
                    let mut dx = Tensor::zeros(y.rows(), y.cols());
                    for ((d, &yv), &gv) in dx.data_mut().iter_mut().zip(y.data()).zip(g.data()) {
                        *d = gv * (S::one() - yv * yv);
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Softmax { x } => {
                if self.needs(*x) {
                    let y = self.value(id);
                    let (rows, cols) = (y.rows(), y.cols());
                    let mut dx = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        let mut dot = S::zero();
                        for c in 0..cols {
                            dot += g.get(r, c) * y.get(r, c);
                        }
                        for c in 0..cols {
                            dx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut row = 0;
                    for &p in parts {
                        let pr = self.value(p).rows();
                        let cols = self.value(p).cols();
                        if self.needs(p) {
                            let data = g.data()[row * cols..(row + pr) * cols].to_vec();
                            self.accumulate(grads, p, Tensor::from_vec(pr, cols, data));
                        }
                        row += pr;
                    }
                } else {
                    let mut col = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let rows = self.value(p).rows();
                        if self.needs(p) {
                            let mut dp = Tensor::zeros(rows, pc);
                            for r in 0..rows {
                                for c in 0..pc {
                                    dp.set(r, c, g.get(r, col + c));
                                }
                            }
                            self.accumulate(grads, p, dp);
                        }
                        col += pc;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                    let cols = xv.cols();
                    for r in 0..g.rows() {
                        for c in 0..cols {
                            dx.set(start + r, c, g.get(r, c));
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Lookup { matrix, indices } => {
                if self.needs(*matrix) {
                    let mv = self.value(*matrix);
                    let cols = mv.cols();
                    let mut dm = Tensor::zeros(mv.rows(), cols);
                    for (r, &i) in indices.iter().enumerate() {
                        for c in 0..cols {
                            let v = dm.get(i, c) + g.get(r, c);
                            dm.set(i, c, v);
                        }
                    }
                    self.accumulate(grads, *matrix, dm);
                }
            }
            Op::Dropout { x, mask } => {
                if self.needs(*x) {
                    let dx = match mask {
                        None => g.clone(),
                        Some(m) => {
                            let mut dx = g.clone();
                            for (d, &mv) in dx.data_mut().iter_mut().zip(m) {
                                *d *= mv;
                            }
                            dx
                        }
                    };
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                if self.needs(*logits) {
                    let lv = self.value(*logits);
                    let (rows, cols) = (lv.rows(), lv.cols());
                    let scale = g.get(0, 0) / S::lit(rows as f64);
                    let mut dl = Tensor::zeros(rows, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            let indicator = if targets[r] == c { S::one() } else { S::zero() };
                            dl.set(r, c, scale * (probs[r * cols + c] - indicator));
                        }
                    }
                    self.accumulate(grads, *logits, dl);
                }
            }
            Op::SumAll { x } => {
                if self.needs(*x) {
                    let xv = self.value(*x);
                    let dx = Tensor::filled(xv.rows(), xv.cols(), g.get(0, 0));
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::Scale { x, c } => {
                if self.needs(*x) {
                    let c = *c;
                    let dx = g.map(|v| v * c);
                    self.accumulate(grads, *x, dx);
                }
            }
        }
    }
}
