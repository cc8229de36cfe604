//! Wengert-list reverse-mode differentiation.
//!
//! Operations are appended to a [`Tape`] as they execute. [`Tape::backward`]
//! walks the list once in reverse and returns gradients for every trainable
//! parameter leaf, keyed by parameter name. Frozen leaves never receive a
//! gradient and no work is spent on branches that only reach frozen leaves.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Additive mask applied to attention scores of padded key positions.
pub const ATTENTION_MASK: f64 = -1e9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op {
    Leaf {
        param: Option<String>,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    MatMulBt {
        a: usize,
        b: usize,
    },
    Add {
        a: usize,
        b: usize,
    },
    AddRow {
        a: usize,
        bias: usize,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        c: f64,
    },
    Gelu {
        a: usize,
    },
    Dropout {
        a: usize,
        mask: Vec<f64>,
    },
    Gather {
        table: usize,
        ids: Vec<usize>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        lengths: Vec<usize>,
        seq_len: usize,
        probs: Vec<f64>,
    },
    SoftmaxXent {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
        count: usize,
    },
    Sum {
        a: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::MatMulBt { .. } => "matmul_bt",
            Op::Add { .. } => "add",
            Op::AddRow { .. } => "add_row",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Gelu { .. } => "gelu",
            Op::Dropout { .. } => "dropout",
            Op::Gather { .. } => "gather",
            Op::Attention { .. } => "attention",
            Op::SoftmaxXent { .. } => "softmax_xent",
            Op::Sum { .. } => "sum",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to named trainable parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.grads.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.grads.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    /// Kind of every recorded node, in recording order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().map(|n| n.op.name()).collect()
    }

    /// A constant input; never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// A named parameter. Gradients are produced for it only when `trainable`.
    pub fn param(&mut self, name: &str, value: &Tensor, trainable: bool) -> Var {
        self.push(
            value.clone(),
            Op::Leaf {
                param: Some(name.to_string()),
            },
            trainable,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (m, k) = self.mat(ia, "matmul", ib)?;
        let (k2, n) = self.mat(ib, "matmul", ia)?;
        if k != k2 {
            return Err(self.mismatch("matmul", ia, ib));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(self.data(ia), self.data(ib), &mut out, m, k, n);
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul { a: ia, b: ib }, ng))
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (m, k) = self.mat(ia, "matmul_bt", ib)?;
        let (n, k2) = self.mat(ib, "matmul_bt", ia)?;
        if k != k2 {
            return Err(self.mismatch("matmul_bt", ia, ib));
        }
        let mut out = vec![0.0; m * n];
        gemm_nt(self.data(ia), self.data(ib), &mut out, m, k, n);
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMulBt { a: ia, b: ib }, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let value = self.nodes[ia].value.add(&self.nodes[ib].value)?;
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(value, Op::Add { a: ia, b: ib }, ng))
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(bias)?);
        let (m, n) = self.mat(ia, "add_row", ib)?;
        if self.nodes[ib].value.len() != n {
            return Err(self.mismatch("add_row", ia, ib));
        }
        let b = self.data(ib);
        let mut out = self.data(ia).to_vec();
        for row in out.chunks_mut(n) {
            for (o, bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::AddRow { a: ia, bias: ib }, ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        if self.nodes[ia].value.shape() != self.nodes[ib].value.shape() {
            return Err(self.mismatch("mul", ia, ib));
        }
        let data = self.data(ia).iter().zip(self.data(ib)).map(|(x, y)| x * y).collect();
        let shape = self.nodes[ia].value.shape().to_vec();
        let ng = self.ng(ia) || self.ng(ib);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul { a: ia, b: ib }, ng))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let ia = self.index(a)?;
        let value = self.nodes[ia].value.scale(c);
        let ng = self.ng(ia);
        Ok(self.push(value, Op::Scale { a: ia, c }, ng))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let shape = self.nodes[ia].value.shape().to_vec();
        let data = self.data(ia).iter().map(|&x| gelu(x)).collect();
        let ng = self.ng(ia);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Gelu { a: ia }, ng))
    }

    /// Multiplies by a precomputed mask (entries 0 or `1/(1-p)`).
    pub fn dropout(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ia = self.index(a)?;
        if mask.len() != self.nodes[ia].value.len() {
            return Err(Error::ShapeMismatch {
                op: "dropout",
                left: self.nodes[ia].value.shape().to_vec(),
                right: vec![mask.len()],
            });
        }
        let shape = self.nodes[ia].value.shape().to_vec();
        let data = self.data(ia).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let ng = self.ng(ia);
        Ok(self.push(Tensor::from_parts(shape, data), Op::Dropout { a: ia, mask }, ng))
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.index(table)?;
        let (rows, d) = self.mat(it, "gather", it)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidInput(format!(
                "gather index {bad} out of range for table with {rows} rows"
            )));
        }
        if ids.is_empty() {
            return Err(Error::InvalidInput("gather with no indices".into()));
        }
        let src = self.data(it);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let ng = self.ng(it);
        Ok(self.push(
            Tensor::from_parts(vec![ids.len(), d], out),
            Op::Gather {
                table: it,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Single-head scaled dot-product attention over a padded batch.
    ///
    /// `q`, `k`, `v` are `(batch·seq_len)×d`; example `b` occupies rows
    /// `b·seq_len ..` and has `lengths[b]` real positions. Keys past the length
    /// receive [`ATTENTION_MASK`]; padded query rows produce zeros.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, lengths: &[usize], seq_len: usize) -> Result<Var> {
        let (iq, ik, iv) = (self.index(q)?, self.index(k)?, self.index(v)?);
        let shape = self.nodes[iq].value.shape().to_vec();
        if self.nodes[ik].value.shape() != shape.as_slice() {
            return Err(self.mismatch("attention", iq, ik));
        }
        if self.nodes[iv].value.shape() != shape.as_slice() {
            return Err(self.mismatch("attention", iq, iv));
        }
        let (rows, d) = self.mat(iq, "attention", ik)?;
        if rows != lengths.len() * seq_len || lengths.iter().any(|&l| l == 0 || l > seq_len) {
            return Err(Error::InvalidInput(format!(
                "attention layout: {rows} rows for {} sequences of padded length {seq_len}",
                lengths.len()
            )));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (self.data(iq), self.data(ik), self.data(iv));
        let mut out = vec![0.0; rows * d];
        let mut probs = vec![0.0; lengths.len() * seq_len * seq_len];
        let mut scores = vec![0.0; seq_len];
        for (b, &len) in lengths.iter().enumerate() {
            let base = b * seq_len;
            for i in 0..len {
                let qi = &qd[(base + i) * d..(base + i + 1) * d];
                for (j, s) in scores.iter_mut().enumerate() {
                    let kj = &kd[(base + j) * d..(base + j + 1) * d];
                    let dot: f64 = qi.iter().zip(kj).map(|(x, y)| x * y).sum();
                    *s = dot * scale + if j < len { 0.0 } else { ATTENTION_MASK };
                }
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let p_row = &mut probs[(base + i) * seq_len..(base + i + 1) * seq_len];
                let mut total = 0.0;
                for (p, s) in p_row.iter_mut().zip(&scores) {
                    *p = (s - max).exp();
                    total += *p;
                }
                let o = &mut out[(base + i) * d..(base + i + 1) * d];
                for (j, p) in p_row.iter_mut().enumerate() {
                    *p /= total;
                    let vj = &vd[(base + j) * d..(base + j + 1) * d];
                    for (ov, vv) in o.iter_mut().zip(vj) {
                        *ov += *p * vv;
                    }
                }
            }
        }
        let ng = self.ng(iq) || self.ng(ik) || self.ng(iv);
        Ok(self.push(
            Tensor::from_parts(vec![rows, d], out),
            Op::Attention {
                q: iq,
                k: ik,
                v: iv,
                lengths: lengths.to_vec(),
                seq_len,
                probs,
            },
            ng,
        ))
    }

    /// Mean softmax cross-entropy over rows whose target is `Some`.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let il = self.index(logits)?;
        let (rows, classes) = self.mat(il, "softmax_xent", il)?;
        if targets.len() != rows {
            return Err(Error::ShapeMismatch {
                op: "softmax_xent",
                left: vec![rows, classes],
                right: vec![targets.len()],
            });
        }
        if let Some(t) = targets.iter().flatten().find(|&&t| t >= classes) {
            return Err(Error::InvalidInput(format!(
                "target {t} out of range for {classes} classes"
            )));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::InvalidInput("every position is padding; loss undefined".into()));
        }
        let x = self.data(il);
        let mut probs = vec![0.0; rows * classes];
        let mut loss = 0.0;
        for (r, target) in targets.iter().enumerate() {
            let Some(t) = *target else { continue };
            let row = &x[r * classes..(r + 1) * classes];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + total.ln();
            loss += log_z - row[t];
            for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        let ng = self.ng(il);
        Ok(self.push(
            Tensor::scalar(loss / count as f64),
            Op::SoftmaxXent {
                logits: il,
                targets: targets.to_vec(),
                probs,
                count,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let s = self.nodes[ia].value.sum();
        let ng = self.ng(ia);
        Ok(self.push(Tensor::scalar(s), Op::Sum { a: ia }, ng))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_traced(loss).map(|(g, _)| g)
    }

    /// Like [`Tape::backward`], also returning the node indices visited, in
    /// visiting order.
    pub fn backward_traced(&self, loss: Var) -> Result<(Gradients, Vec<usize>)> {
        let il = self.index(loss)?;
        let loss_shape = self.nodes[il].value.shape();
        if !self.nodes[il].value.is_scalar() {
            return Err(Error::NotScalar(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; il + 1];
        grads[il] = Some(vec![1.0]);
        let mut visited = Vec::new();
        let mut out = Gradients::default();

        for idx in (0..=il).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visited.push(idx);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(name) = param {
                        let t = Tensor::from_parts(node.value.shape().to_vec(), g);
                        match out.grads.get_mut(name) {
                            Some(acc) => {
                                for (x, y) in acc.data_mut().iter_mut().zip(t.data()) {
                                    *x += y;
                                }
                            }
                            None => {
                                out.grads.insert(name.clone(), t);
                            }
                        }
                    }
                }
                Op::MatMul { a, b } => {
                    let (m, k) = self.nodes[*a].value.dims2();
                    let n = self.nodes[*b].value.dims2().1;
                    if self.ng(*a) {
                        let mut ga = vec![0.0; m * k];
                        gemm_nt(&g, self.data(*b), &mut ga, m, n, k);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let mut gb = vec![0.0; k * n];
                        gemm_tn(self.data(*a), &g, &mut gb, k, m, n);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulBt { a, b } => {
                    let (m, k) = self.nodes[*a].value.dims2();
                    let n = self.nodes[*b].value.dims2().0;
                    if self.ng(*a) {
                        let mut ga = vec![0.0; m * k];
                        gemm_nn(&g, self.data(*b), &mut ga, m, n, k);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let mut gb = vec![0.0; n * k];
                        gemm_tn(&g, self.data(*a), &mut gb, n, m, k);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Add { a, b } => {
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow { a, bias } => {
                    if self.ng(*bias) {
                        let n = self.nodes[*bias].value.len();
                        let mut gb = vec![0.0; n];
                        for row in g.chunks(n) {
                            for (x, y) in gb.iter_mut().zip(row) {
                                *x += y;
                            }
                        }
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul { a, b } => {
                    if self.ng(*a) {
                        let ga = g.iter().zip(self.data(*b)).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = g.iter().zip(self.data(*a)).map(|(x, y)| x * y).collect();
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Scale { a, c } => {
                    accumulate(&mut grads, *a, g.iter().map(|x| x * c).collect());
                }
                Op::Gelu { a } => {
                    let ga = g.iter().zip(self.data(*a)).map(|(gv, &x)| gv * gelu_grad(x)).collect();
                    accumulate(&mut grads, *a, ga);
                }
                Op::Dropout { a, mask } => {
                    accumulate(&mut grads, *a, g.iter().zip(mask).map(|(x, m)| x * m).collect());
                }
                Op::Gather { table, ids } => {
                    let (rows, d) = self.nodes[*table].value.dims2();
                    let mut gt = vec![0.0; rows * d];
                    for (r, &i) in ids.iter().enumerate() {
                        for (x, y) in gt[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    lengths,
                    seq_len,
                    probs,
                } => {
                    let (gq, gk, gv) = self.attention_backward(&g, *q, *k, *v, lengths, *seq_len, probs);
                    if self.ng(*q) {
                        accumulate(&mut grads, *q, gq);
                    }
                    if self.ng(*k) {
                        accumulate(&mut grads, *k, gk);
                    }
                    if self.ng(*v) {
                        accumulate(&mut grads, *v, gv);
                    }
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let classes = self.nodes[*logits].value.dims2().1;
                    let scale = g[0] / *count as f64;
                    let mut gl = vec![0.0; probs.len()];
                    for (r, target) in targets.iter().enumerate() {
                        let Some(t) = *target else { continue };
                        let row = &mut gl[r * classes..(r + 1) * classes];
                        for (x, p) in row.iter_mut().zip(&probs[r * classes..(r + 1) * classes]) {
                            *x = p * scale;
                        }
                        row[t] -= scale;
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Sum { a } => {
                    let n = self.nodes[*a].value.len();
                    accumulate(&mut grads, *a, vec![g[0]; n]);
                }
            }
        }
        Ok((out, visited))
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        g: &[f64],
        q: usize,
        k: usize,
        v: usize,
        lengths: &[usize],
        seq_len: usize,
        probs: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (rows, d) = self.nodes[q].value.dims2();
        let scale = 1.0 / (d as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut gq = vec![0.0; rows * d];
        let mut gk = vec![0.0; rows * d];
        let mut gv = vec![0.0; rows * d];
        let mut dp = vec![0.0; seq_len];
        for (b, &len) in lengths.iter().enumerate() {
            let base = b * seq_len;
            for i in 0..len {
                let gi = &g[(base + i) * d..(base + i + 1) * d];
                let p_row = &probs[(base + i) * seq_len..(base + i + 1) * seq_len];
                let mut weighted = 0.0;
                for j in 0..seq_len {
                    let vj = &vd[(base + j) * d..(base + j + 1) * d];
                    dp[j] = gi.iter().zip(vj).map(|(x, y)| x * y).sum();
                    weighted += p_row[j] * dp[j];
                    if p_row[j] != 0.0 {
                        for (gvv, gg) in gv[(base + j) * d..(base + j + 1) * d].iter_mut().zip(gi) {
                            *gvv += p_row[j] * gg;
                        }
                    }
                }
                for j in 0..seq_len {
                    let ds = p_row[j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in 0..d {
                        gq[(base + i) * d + c] += ds * kd[(base + j) * d + c];
                        gk[(base + j) * d + c] += ds * qd[(base + i) * d + c];
                    }
                }
            }
        }
        (gq, gk, gv)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx >= self.nodes.len() {
            return Err(Error::NotOnTape);
        }
        Ok(v.idx)
    }

    fn ng(&self, idx: usize) -> bool {
        self.nodes[idx].needs_grad
    }

    fn data(&self, idx: usize) -> &[f64] {
        self.nodes[idx].value.data()
    }

    fn mat(&self, idx: usize, op: &'static str, other: usize) -> Result<(usize, usize)> {
        match self.nodes[idx].value.shape() {
            [r, c] => Ok((*r, *c)),
            _ => Err(self.mismatch(op, idx, other)),
        }
    }

    fn mismatch(&self, op: &'static str, a: usize, b: usize) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.nodes[a].value.shape().to_vec(),
            right: self.nodes[b].value.shape().to_vec(),
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, g: Vec<f64>) {
    match &mut grads[idx] {
        Some(acc) => {
            for (x, y) in acc.iter_mut().zip(&g) {
                *x += y;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frozen_leaf_gets_no_gradient() {
        let mut tape = Tape::new();
        let w = tape.param("W", &Tensor::filled(&[2, 3], 0.5), false);
        let x = tape.param("x", &Tensor::filled(&[3, 1], 1.0), true);
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(!g.contains("W"));
        assert!(g.contains("x"));
    }

    #[test]
    fn sum_of_wx_gives_outer_structure() {
        let mut tape = Tape::new();
        let w = tape.param("W", &Tensor::filled(&[2, 3], 0.1), true);
        let x = tape.constant(Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("W").unwrap().data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn independent_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let p = tape.param("p", &Tensor::filled(&[2, 2], 3.0), true);
        let z = tape.scale(p, 0.0).unwrap();
        let c = tape.constant(Tensor::filled(&[2, 2], 1.0));
        let y = tape.add(z, c).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get("p").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn foreign_var_is_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.param("x", &Tensor::scalar(1.0), true);
        let loss = a.sum(x).unwrap();
        assert!(matches!(b.backward(loss), Err(Error::NotOnTape)));
        assert!(matches!(b.sum(x), Err(Error::NotOnTape)));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::filled(&[2, 2], 1.0), true);
        assert!(matches!(tape.backward(x), Err(Error::NotScalar(_))));
    }

    #[test]
    fn backward_visits_each_op_once_in_reverse() {
        let mut tape = Tape::new();
        let w = tape.param("W", &Tensor::filled(&[2, 2], 0.3), true);
        let x = tape.param("x", &Tensor::filled(&[2, 2], 0.7), true);
        let a = tape.matmul(w, x).unwrap();
        let b = tape.gelu(a).unwrap();
        let c = tape.add(b, a).unwrap();
        let loss = tape.sum(c).unwrap();
        let (_, visited) = tape.backward_traced(loss).unwrap();
        let mut sorted = visited.clone();
        sorted.sort_unstable_by(|a, b| b.cmp(a));
        sorted.dedup();
        assert_eq!(visited, sorted);
        assert_eq!(visited.len(), tape.len());
    }

    #[test]
    fn uniform_logits_give_ln_c() {
        for classes in [2usize, 3, 7, 13] {
            let mut tape = Tape::new();
            let l = tape.constant(Tensor::filled(&[4, classes], 0.25));
            let loss = tape
                .softmax_xent(l, &[Some(0), Some(1), None, Some(classes - 1)])
                .unwrap();
            let v = tape.value(loss).unwrap().data()[0];
            assert!((v - (classes as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn all_padded_loss_is_rejected() {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::filled(&[2, 3], 0.0));
        assert!(tape.softmax_xent(l, &[None, None]).is_err());
    }
}
