//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] owns every value produced during one forward pass. [`Var`] is a
//! cheap copyable handle into it. Operations whose inputs are all constants
//! are still recorded (so values stay addressable) but never receive
//! gradient.

use std::cell::{Ref, RefCell};
use std::sync::Arc;

use super::kernels;
use super::{NumericsError, Result, Tensor};

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddRow(usize, usize),
    Gelu(usize),
    Sigmoid(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        eps: f64,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    SoftmaxRows(usize),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        mask: Arc<[bool]>,
        probs: Vec<f64>,
    },
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    GatherRows(usize, Vec<usize>),
    Sum(usize),
    Bce(usize, f64),
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of one forward pass. Inputs of every node precede it.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`. `None` when the variable does not require grad;
    /// zeros when it does but the loss does not depend on it.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Re-evaluates every recorded node from the stored leaf values and
    /// returns the recomputed outputs in tape order.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let nodes = self.nodes.borrow();
        let scratch = Tape::new();
        let mut map: Vec<Var<'_>> = Vec::with_capacity(nodes.len());
        for node in nodes.iter() {
            let v = match &node.op {
                Op::Leaf => scratch.leaf(node.value.clone(), node.requires_grad),
                Op::MatMul(a, b) => map[*a].matmul(map[*b])?,
                Op::Transpose(a) => map[*a].transpose()?,
                Op::Add(a, b) => map[*a].add(map[*b])?,
                Op::Sub(a, b) => map[*a].sub(map[*b])?,
                Op::Mul(a, b) => map[*a].mul(map[*b])?,
                Op::Scale(a, s) => map[*a].scale(*s),
                Op::AddRow(a, b) => map[*a].add_row(map[*b])?,
                Op::Gelu(a) => map[*a].gelu(),
                Op::Sigmoid(a) => map[*a].sigmoid(),
                Op::LayerNorm {
                    x, gain, bias, eps, ..
                } => map[*x].layer_norm(map[*gain], map[*bias], *eps)?,
                Op::SoftmaxRows(a) => map[*a].softmax_rows()?,
                Op::Attention {
                    q, k, v, heads, mask, ..
                } => scratch.attention(map[*q], map[*k], map[*v], *heads, mask.clone())?,
                Op::ConcatRows(parts) => {
                    let parts: Vec<Var<'_>> = parts.iter().map(|&i| map[i]).collect();
                    scratch.concat_rows(&parts)?
                }
                Op::SliceRows(a, start) => {
                    let rows = node.value.rows();
                    map[*a].slice_rows(*start, *start + rows)?
                }
                Op::GatherRows(t, ids) => map[*t].gather_rows(ids)?,
                Op::Sum(a) => map[*a].sum(),
                Op::Bce(p, y) => map[*p].bce(*y)?,
                Op::CrossEntropy {
                    logits, targets, ..
                } => map[*logits].cross_entropy(targets)?,
            };
            map.push(v);
        }
        Ok(map.iter().map(|v| v.value().clone()).collect())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(NumericsError::Usage("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(NumericsError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let n = loss.id + 1;
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.iter().enumerate() {
            let g = if node.requires_grad {
                let data = grads
                    .get_mut(id)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; node.value.len()]);
                Some(Tensor::new(node.value.shape().to_vec(), data)?)
            } else {
                None
            };
            out.push(g);
        }
        Ok(Gradients { grads: out })
    }

    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        let nodes = self.nodes.borrow();
        let cols = parts
            .iter()
            .map(|p| nodes[p.id].value.cols())
            .find(|_| true)
            .ok_or_else(|| NumericsError::Usage("concat_rows of no parts".into()))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let v = &nodes[p.id].value;
            if v.cols() != cols {
                return Err(NumericsError::Shape {
                    op: "concat_rows",
                    left: vec![rows, cols],
                    right: v.shape().to_vec(),
                });
            }
            rows += matrix_rows(v);
            data.extend_from_slice(v.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        drop(nodes);
        let rg = self.needs(&ids);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows(ids), rg))
    }

    /// Fused multi-head scaled dot-product attention.
    ///
    /// `q`, `k`, `v` are `n×d`; `d` is split into `heads` contiguous blocks.
    /// `mask` is row-major `n×n`, `true` where query `i` may see key `j`.
    /// Output is the per-head results concatenated back to `n×d`.
    pub fn attention<'t>(
        &'t self,
        q: Var<'t>,
        k: Var<'t>,
        v: Var<'t>,
        heads: usize,
        mask: Arc<[bool]>,
    ) -> Result<Var<'t>> {
        let nodes = self.nodes.borrow();
        let (qv, kv, vv) = (&nodes[q.id].value, &nodes[k.id].value, &nodes[v.id].value);
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || qv.shape().len() != 2 {
            return Err(NumericsError::Shape {
                op: "attention",
                left: qv.shape().to_vec(),
                right: kv.shape().to_vec(),
            });
        }
        let (n, d) = (qv.rows(), qv.cols());
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::Usage(format!(
                "model width {d} not divisible by {heads} heads"
            )));
        }
        if mask.len() != n * n {
            return Err(NumericsError::Shape {
                op: "attention mask",
                left: vec![n, n],
                right: vec![mask.len()],
            });
        }
        let hd = d / heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
        let mut probs = vec![0.0; heads * n * n];
        let mut out = vec![0.0; n * d];
        let mut scores = vec![0.0; n];
        for h in 0..heads {
            let off = h * hd;
            for i in 0..n {
                let qi = &qd[i * d + off..i * d + off + hd];
                let allowed = &mask[i * n..(i + 1) * n];
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if allowed[j] {
                        let s = kernels::dot(qi, &kd[j * d + off..j * d + off + hd]) * scale;
                        scores[j] = s;
                        max = max.max(s);
                    }
                }
                if max == f64::NEG_INFINITY {
                    return Err(NumericsError::Usage(format!(
                        "attention row {i} has no visible position"
                    )));
                }
                let prow = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let mut sum = 0.0;
                for j in 0..n {
                    if allowed[j] {
                        let e = (scores[j] - max).exp();
                        prow[j] = e;
                        sum += e;
                    }
                }
                let inv = 1.0 / sum;
                let orow = &mut out[i * d + off..i * d + off + hd];
                for j in 0..n {
                    if allowed[j] {
                        prow[j] *= inv;
                        kernels::axpy(prow[j], &vd[j * d + off..j * d + off + hd], orow);
                    }
                }
            }
        }
        drop(nodes);
        let rg = self.needs(&[q.id, k.id, v.id]);
        if !rg {
            probs = Vec::new();
        }
        Ok(self.push(
            Tensor::new(vec![n, d], out)?,
            Op::Attention {
                q: q.id,
                k: k.id,
                v: v.id,
                heads,
                mask,
                probs,
            },
            rg,
        ))
    }
}

fn matrix_rows(t: &Tensor) -> usize {
    if t.shape().len() == 1 {
        1
    } else {
        t.rows()
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let rg = |i: usize| nodes[i].requires_grad;
    let val = |i: usize| &nodes[i].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (matrix_rows(av), av.cols(), bv.cols());
            if rg(*a) {
                let da = acc(grads, *a, m * k);
                kernels::matmul_grad_left(g, bv.data(), da, m, k, n);
            }
            if rg(*b) {
                let db = acc(grads, *b, k * n);
                kernels::matmul_grad_right(av.data(), g, db, m, k, n);
            }
        }
        Op::Transpose(a) => {
            if rg(*a) {
                let av = val(*a);
                let (r, c) = (matrix_rows(av), av.cols());
                let da = acc(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for &x in [a, b] {
                if rg(x) {
                    let dx = acc(grads, x, g.len());
                    kernels::axpy(1.0, g, dx);
                }
            }
        }
        Op::Sub(a, b) => {
            if rg(*a) {
                kernels::axpy(1.0, g, acc(grads, *a, g.len()));
            }
            if rg(*b) {
                kernels::axpy(-1.0, g, acc(grads, *b, g.len()));
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if rg(*a) {
                let da = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * bv[i];
                }
            }
            if rg(*b) {
                let db = acc(grads, *b, g.len());
                for i in 0..g.len() {
                    db[i] += g[i] * av[i];
                }
            }
        }
        Op::Scale(a, s) => {
            if rg(*a) {
                kernels::axpy(*s, g, acc(grads, *a, g.len()));
            }
        }
        Op::AddRow(a, b) => {
            if rg(*a) {
                kernels::axpy(1.0, g, acc(grads, *a, g.len()));
            }
            if rg(*b) {
                let c = val(*b).len();
                let db = acc(grads, *b, c);
                for row in g.chunks(c) {
                    kernels::axpy(1.0, row, db);
                }
            }
        }
        Op::Gelu(a) => {
            if rg(*a) {
                let av = val(*a).data();
                let da = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * kernels::gelu_grad(av[i]);
                }
            }
        }
        Op::Sigmoid(a) => {
            if rg(*a) {
                let y = node.value.data();
                let da = acc(grads, *a, g.len());
                for i in 0..g.len() {
                    da[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
            ..
        } => {
            let d = val(*gain).len();
            let gv = val(*gain).data();
            if rg(*gain) {
                let dg = acc(grads, *gain, d);
                for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                    for j in 0..d {
                        dg[j] += grow[j] * hrow[j];
                    }
                }
            }
            if rg(*bias) {
                let db = acc(grads, *bias, d);
                for grow in g.chunks(d) {
                    kernels::axpy(1.0, grow, db);
                }
            }
            if rg(*x) {
                let dx = acc(grads, *x, g.len());
                let mut dxhat = vec![0.0; d];
                for (r, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for j in 0..d {
                        dxhat[j] = grow[j] * gv[j];
                        mean_dh += dxhat[j];
                        mean_dh_h += dxhat[j] * hrow[j];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    let out = &mut dx[r * d..(r + 1) * d];
                    for j in 0..d {
                        out[j] += rstd[r] * (dxhat[j] - mean_dh - hrow[j] * mean_dh_h);
                    }
                }
            }
        }
        Op::SoftmaxRows(a) => {
            if rg(*a) {
                let y = node.value.data();
                let c = node.value.cols();
                let da = acc(grads, *a, g.len());
                for ((yrow, grow), drow) in y.chunks(c).zip(g.chunks(c)).zip(da.chunks_mut(c)) {
                    let s = kernels::dot(yrow, grow);
                    for j in 0..c {
                        drow[j] += yrow[j] * (grow[j] - s);
                    }
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            heads,
            mask,
            probs,
        } => {
            let (qv, kv, vv) = (val(*q), val(*k), val(*v));
            let (n, d) = (qv.rows(), qv.cols());
            let hd = d / heads;
            let scale = 1.0 / (hd as f64).sqrt();
            let (qd, kd, vd) = (qv.data(), kv.data(), vv.data());
            let mut dq = vec![0.0; n * d];
            let mut dk = vec![0.0; n * d];
            let mut dv = vec![0.0; n * d];
            let mut dp = vec![0.0; n];
            for h in 0..*heads {
                let off = h * hd;
                for i in 0..n {
                    let gi = &g[i * d + off..i * d + off + hd];
                    let prow = &probs[(h * n + i) * n..(h * n + i + 1) * n];
                    let allowed = &mask[i * n..(i + 1) * n];
                    let mut s = 0.0;
                    for j in 0..n {
                        if allowed[j] {
                            dp[j] = kernels::dot(gi, &vd[j * d + off..j * d + off + hd]);
                            s += prow[j] * dp[j];
                            kernels::axpy(prow[j], gi, &mut dv[j * d + off..j * d + off + hd]);
                        }
                    }
                    let qi = &qd[i * d + off..i * d + off + hd];
                    for j in 0..n {
                        if allowed[j] {
                            let ds = prow[j] * (dp[j] - s) * scale;
                            if ds != 0.0 {
                                kernels::axpy(
                                    ds,
                                    &kd[j * d + off..j * d + off + hd],
                                    &mut dq[i * d + off..i * d + off + hd],
                                );
                                kernels::axpy(ds, qi, &mut dk[j * d + off..j * d + off + hd]);
                            }
                        }
                    }
                }
            }
            for (id, buf) in [(*q, dq), (*k, dk), (*v, dv)] {
                if rg(id) {
                    kernels::axpy(1.0, &buf, acc(grads, id, n * d));
                }
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let len = val(p).len();
                if rg(p) {
                    kernels::axpy(1.0, &g[off..off + len], acc(grads, p, len));
                }
                off += len;
            }
        }
        Op::SliceRows(a, start) => {
            if rg(*a) {
                let av = val(*a);
                let c = av.cols();
                let da = acc(grads, *a, av.len());
                kernels::axpy(1.0, g, &mut da[start * c..start * c + g.len()]);
            }
        }
        Op::GatherRows(t, ids) => {
            if rg(*t) {
                let tv = val(*t);
                let c = tv.cols();
                let dt = acc(grads, *t, tv.len());
                for (r, &id) in ids.iter().enumerate() {
                    kernels::axpy(1.0, &g[r * c..(r + 1) * c], &mut dt[id * c..(id + 1) * c]);
                }
            }
        }
        Op::Sum(a) => {
            if rg(*a) {
                let len = val(*a).len();
                let da = acc(grads, *a, len);
                for x in da.iter_mut() {
                    *x += g[0];
                }
            }
        }
        Op::Bce(p, y) => {
            if rg(*p) {
                let pv = clamp_prob(val(*p).item());
                let d = -y / pv + (1.0 - y) / (1.0 - pv);
                acc(grads, *p, 1)[0] += g[0] * d;
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            if rg(*logits) {
                let lv = val(*logits);
                let c = lv.cols();
                let n = targets.len() as f64;
                let dl = acc(grads, *logits, lv.len());
                for (r, &t) in targets.iter().enumerate() {
                    let prow = &probs[r * c..(r + 1) * c];
                    let drow = &mut dl[r * c..(r + 1) * c];
                    for j in 0..c {
                        let target = if j == t { 1.0 } else { 0.0 };
                        drow[j] += g[0] * (prow[j] - target) / n;
                    }
                }
            }
        }
    }
}

/// Probability clamp used by the binary cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn same_tape(self, other: Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(NumericsError::Usage("operands live on different tapes".into()))
        }
    }

    fn emit(self, value: Tensor, op: Op, inputs: &[usize]) -> Var<'t> {
        let rg = self.tape.needs(inputs);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let out = {
            let (a, b) = (self.value(), other.value());
            let (m, k) = (matrix_rows(&a), a.cols());
            let (k2, n) = (matrix_rows(&b), b.cols());
            if k != k2 {
                return Err(NumericsError::Shape {
                    op: "matmul",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            Tensor::new(vec![m, n], kernels::matmul(a.data(), b.data(), m, k, n))?
        };
        Ok(self.emit(out, Op::MatMul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let (r, c) = (matrix_rows(&a), a.cols());
            let src = a.data();
            let mut data = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    data[j * r + i] = src[i * c + j];
                }
            }
            Tensor::new(vec![c, r], data)?
        };
        Ok(self.emit(out, Op::Transpose(self.id), &[self.id]))
    }

    fn zip_with(self, other: Var<'t>, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(NumericsError::Shape {
                op,
                left: a.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.zip_with(other, "add", |x, y| x + y)?;
        Ok(self.emit(out, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.zip_with(other, "sub", |x, y| x - y)?;
        Ok(self.emit(out, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.zip_with(other, "mul", |x, y| x * y)?;
        Ok(self.emit(out, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let out = {
            let a = self.value();
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|x| x * s).collect())
                .expect("same shape")
        };
        self.emit(out, Op::Scale(self.id, s), &[self.id])
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(self, row: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(row)?;
        let out = {
            let (a, b) = (self.value(), row.value());
            let c = a.cols();
            if b.len() != c {
                return Err(NumericsError::Shape {
                    op: "add_row",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            let mut data = a.data().to_vec();
            for r in data.chunks_mut(c) {
                kernels::axpy(1.0, b.data(), r);
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.emit(out, Op::AddRow(self.id, row.id), &[self.id, row.id]))
    }

    pub fn gelu(self) -> Var<'t> {
        let out = {
            let a = self.value();
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| kernels::gelu(x)).collect())
                .expect("same shape")
        };
        self.emit(out, Op::Gelu(self.id), &[self.id])
    }

    pub fn sigmoid(self) -> Var<'t> {
        let out = {
            let a = self.value();
            Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| kernels::sigmoid(x)).collect())
                .expect("same shape")
        };
        self.emit(out, Op::Sigmoid(self.id), &[self.id])
    }

    /// Row-wise normalization followed by an elementwise affine map.
    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        self.same_tape(gain)?;
        self.same_tape(bias)?;
        if !(eps > 0.0) {
            return Err(NumericsError::Usage(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (out, xhat, rstd) = {
            let (x, gv, bv) = (self.value(), gain.value(), bias.value());
            let d = x.cols();
            if d == 0 || gv.len() != d || bv.len() != d {
                return Err(NumericsError::Shape {
                    op: "layer_norm",
                    left: x.shape().to_vec(),
                    right: gv.shape().to_vec(),
                });
            }
            let rows = x.len() / d;
            let mut out = vec![0.0; x.len()];
            let mut xhat = vec![0.0; x.len()];
            let mut rstd = vec![0.0; rows];
            for r in 0..rows {
                let row = &x.data()[r * d..(r + 1) * d];
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                let rs = 1.0 / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..d {
                    let h = (row[j] - mean) * rs;
                    xhat[r * d + j] = h;
                    out[r * d + j] = h * gv.data()[j] + bv.data()[j];
                }
            }
            (Tensor::new(x.shape().to_vec(), out)?, xhat, rstd)
        };
        let ids = [self.id, gain.id, bias.id];
        let rg = self.tape.needs(&ids);
        let (xhat, rstd) = if rg { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        Ok(self.tape.push(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                eps,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            if a.data().iter().any(|v| v.is_nan()) {
                return Err(NumericsError::NonFinite("softmax_rows input contains NaN"));
            }
            let c = a.cols();
            let mut data = a.data().to_vec();
            if c > 0 {
                for row in data.chunks_mut(c) {
                    kernels::softmax_in_place(row);
                }
            }
            Tensor::new(a.shape().to_vec(), data)?
        };
        Ok(self.emit(out, Op::SoftmaxRows(self.id), &[self.id]))
    }

    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let (r, c) = (matrix_rows(&a), a.cols());
            if start > end || end > r {
                return Err(NumericsError::Usage(format!(
                    "row slice {start}..{end} out of range for {r} rows"
                )));
            }
            Tensor::new(vec![end - start, c], a.data()[start * c..end * c].to_vec())?
        };
        Ok(self.emit(out, Op::SliceRows(self.id, start), &[self.id]))
    }

    /// Row lookup, e.g. an embedding table indexed by token id.
    pub fn gather_rows(self, ids: &[usize]) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let (r, c) = (matrix_rows(&a), a.cols());
            let mut data = Vec::with_capacity(ids.len() * c);
            for &id in ids {
                if id >= r {
                    return Err(NumericsError::Usage(format!(
                        "row index {id} out of range for {r} rows"
                    )));
                }
                data.extend_from_slice(&a.data()[id * c..(id + 1) * c]);
            }
            Tensor::new(vec![ids.len(), c], data)?
        };
        Ok(self.emit(out, Op::GatherRows(self.id, ids.to_vec()), &[self.id]))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.emit(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    /// Binary cross-entropy of a probability against a 0/1 target, with the
    /// probability clamped to `[1e-12, 1 - 1e-12]`.
    pub fn bce(self, target: f64) -> Result<Var<'t>> {
        let p = {
            let v = self.value();
            if v.len() != 1 {
                return Err(NumericsError::Usage("bce expects a scalar probability".into()));
            }
            v.item()
        };
        let loss = bce_value(p, target);
        Ok(self.emit(Tensor::scalar(loss), Op::Bce(self.id, target), &[self.id]))
    }

    /// Mean next-token cross-entropy of `n×V` logits against `n` targets.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'t>> {
        let (loss, probs) = {
            let a = self.value();
            let c = a.cols();
            if matrix_rows(&a) != targets.len() || targets.is_empty() {
                return Err(NumericsError::Shape {
                    op: "cross_entropy",
                    left: a.shape().to_vec(),
                    right: vec![targets.len()],
                });
            }
            let mut probs = a.data().to_vec();
            let mut loss = 0.0;
            for (row, &t) in probs.chunks_mut(c).zip(targets) {
                if t >= c {
                    return Err(NumericsError::Usage(format!("target {t} out of range {c}")));
                }
                kernels::softmax_in_place(row);
                loss -= row[t].max(f64::MIN_POSITIVE).ln();
            }
            (loss / targets.len() as f64, probs)
        };
        Ok(self.emit(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                probs,
            },
            &[self.id],
        ))
    }
}

pub fn bce_value(p: f64, target: f64) -> f64 {
    let p = clamp_prob(p);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}
