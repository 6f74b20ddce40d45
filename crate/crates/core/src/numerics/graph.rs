//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! immutable once created; [`Graph::backward`] walks them in reverse creation
//! order. Parameters are read in place from the borrowed [`ParameterStore`], so a
//! graph is cheap to build and throw away once per training example.

use super::tensor::{dims2, ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Vec<f64>),
    Param(usize),
}

enum Op {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        smoothing: f64,
        probs: Vec<f64>,
        count: usize,
    },
    WeightedSum(Vec<(Var, f64)>),
    Dot(Var, Vec<f64>),
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'p> {
    store: Option<&'p ParameterStore>,
    nodes: Vec<Node>,
    training: bool,
}

/// Result of [`Graph::backward`]: gradients for leaves and parameters.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to a leaf created by [`Graph::leaf`].
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient with respect to the store parameter at `idx`.
    pub fn param(&self, idx: usize) -> Option<&[f64]> {
        self.params.get(idx).and_then(|g| g.as_deref())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            axpy(av, &b[p * n..(p + 1) * n], orow);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    row.iter().map(|x| x - lse).collect()
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}

impl<'p> Graph<'p> {
    /// Graph reading parameters from `store`.
    pub fn new(store: &'p ParameterStore, training: bool) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::new(),
            training,
        }
    }

    /// Graph without parameters, for computations over leaves only.
    pub fn detached(training: bool) -> Graph<'static> {
        Graph {
            store: None,
            nodes: Vec::new(),
            training,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            value: Value::Owned(data),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(d) => d,
            Value::Param(idx) => self.store.expect("param node without store").by_index(*idx).data(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        dims2(&self.nodes[v.0].shape)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape")
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let rg = t.requires_grad;
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, rg)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim("constant", shape, &[data.len()]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        let store = self
            .store
            .ok_or_else(|| Error::TrainingState("graph has no parameter store".into()))?;
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::TrainingState(format!("unknown parameter {name}")))?;
        let shape = store.by_index(idx).shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Param(idx),
            op: Op::Param(idx),
            needs_grad: true,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b), ng))
    }

    /// Adds a row vector (bias) to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if self.value(bias).len() != c {
            return Err(Error::dim("add_row", self.shape(a), self.shape(bias)));
        }
        let b = self.value(bias);
        let mut out = self.value(a).to_vec();
        for i in 0..r {
            for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(b) {
                *o += x;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        Ok(self.push(self.shape(a).to_vec(), out, Op::AddRow(a, bias), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * s).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Relu(a), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, Op::Gelu(a), ng)
    }

    /// Row-wise layer normalization followed by the affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Inverted dropout. Identity outside training mode or when `p == 0`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut RngStream) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let ng = self.ng(x);
        self.push(self.shape(x).to_vec(), out, Op::Dropout { x, mask }, ng)
    }

    /// Row lookup: `out[i] = table[ids[i]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, c) = self.dims(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Vocabulary(format!("id {bad} outside table of {v} rows")));
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            out.extend_from_slice(&t[i * c..(i + 1) * c]);
        }
        let ng = self.ng(table);
        Ok(self.push(
            vec![ids.len(), c],
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims(parts[0]).0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pr != r {
                return Err(Error::dim("concat_cols", self.shape(parts[0]), self.shape(p)));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p);
            for i in 0..r {
                out[i * total + off..i * total + off + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(vec![r, total], out, Op::ConcatCols(parts.to_vec()), ng))
    }

    /// Multi-head scaled dot-product attention over already projected
    /// `q [Tq, d]`, `k [Tk, d]`, `v [Tk, d]`. With `causal`, query `i` sees keys
    /// `j <= i + (Tk - Tq)`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, causal: bool) -> Result<Var> {
        let (tq, d) = self.dims(q);
        let (tk, dk) = self.dims(k);
        let (tv, dv) = self.dims(v);
        if dk != d || dv != d || tv != tk {
            return Err(Error::dim("attention", self.shape(q), self.shape(k)));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::dim("attention heads", &[d], &[heads]));
        }
        if causal && tk < tq {
            return Err(Error::dim("causal attention", &[tq], &[tk]));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; heads * tq * tk];
        let mut out = vec![0.0; tq * d];
        let shift = tk - tq.min(tk);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            for i in 0..tq {
                let prow = &mut probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                let qi = &qv[i * d + cols.start..i * d + cols.end];
                let limit = if causal { i + shift + 1 } else { tk };
                for j in 0..tk {
                    prow[j] = if j < limit {
                        scale * dot(qi, &kv[j * d + cols.start..j * d + cols.end])
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                softmax_in_place(prow);
                let orow = &mut out[i * d + cols.start..i * d + cols.end];
                for j in 0..limit {
                    axpy(prow[j], &vv[j * d + cols.start..j * d + cols.end], orow);
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(vec![tq, d], out, Op::Attention { q, k, v, heads, probs }, ng))
    }

    /// Attention probabilities `[heads][Tq][Tk]` of an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<(usize, usize, usize, &[f64])> {
        match &self.nodes[v.0].op {
            Op::Attention { q, k, heads, probs, .. } => {
                Some((*heads, self.dims(*q).0, self.dims(*k).0, probs.as_slice()))
            }
            _ => None,
        }
    }

    /// Mean label-smoothed cross-entropy over rows whose target is `Some`.
    ///
    /// The smoothed target puts `1 - smoothing + smoothing / V` on the gold
    /// class and `smoothing / V` on every other class.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>], smoothing: f64) -> Result<Var> {
        let (n, vocab) = self.dims(logits);
        if targets.len() != n {
            return Err(Error::dim("cross_entropy", self.shape(logits), &[targets.len()]));
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::Config(format!("label smoothing {smoothing} outside [0, 1)")));
        }
        let lv = self.value(logits);
        let mut probs = vec![0.0; n * vocab];
        let mut total = 0.0;
        let mut count = 0;
        for (i, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= vocab {
                return Err(Error::Vocabulary(format!("target {t} outside vocabulary of {vocab}")));
            }
            let lp = log_softmax(&lv[i * vocab..(i + 1) * vocab]);
            let sum_lp: f64 = lp.iter().sum();
            total += -(1.0 - smoothing) * lp[t] - smoothing / vocab as f64 * sum_lp;
            for (p, l) in probs[i * vocab..(i + 1) * vocab].iter_mut().zip(&lp) {
                *p = l.exp();
            }
            count += 1;
        }
        let value = if count > 0 { total / count as f64 } else { 0.0 };
        let ng = self.ng(logits);
        Ok(self.push(
            vec![1],
            vec![value],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                smoothing,
                probs,
                count,
            },
            ng,
        ))
    }

    /// `sum_i w_i * x_i` over scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut s = 0.0;
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(Error::dim("weighted_sum", self.shape(v), &[1]));
            }
            s += w * self.value(v)[0];
        }
        let ng = terms.iter().any(|&(v, _)| self.ng(v));
        Ok(self.push(vec![1], vec![s], Op::WeightedSum(terms.to_vec()), ng))
    }

    /// Scalar `sum_i x_i * w_i` against a constant weight vector.
    pub fn dot_const(&mut self, x: Var, weights: &[f64]) -> Result<Var> {
        if self.value(x).len() != weights.len() {
            return Err(Error::dim("dot_const", self.shape(x), &[weights.len()]));
        }
        let s = dot(self.value(x), weights);
        let ng = self.ng(x);
        Ok(self.push(vec![1], vec![s], Op::Dot(x, weights.to_vec()), ng))
    }

    /// Gradients of the scalar `loss` with respect to every leaf and parameter.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.shape(loss), &[1]));
        }
        let n_params = self.store.map_or(0, |s| s.len());
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: Vec<Option<Vec<f64>>> = (0..n_params).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::Param(p) => match &mut params[*p] {
                    Some(buf) => axpy(1.0, &g, buf),
                    slot => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let n = self.dims(*b).1;
                    if self.ng(*a) {
                        let bv = self.value(*b);
                        let da = self.grad_buf(&mut grads, *a);
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                da[i * k + p] += dot(gi, &bv[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    if self.ng(*b) {
                        let av = self.value(*a);
                        let db = self.grad_buf(&mut grads, *b);
                        for i in 0..m {
                            let gi = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                axpy(av[i * k + p], gi, &mut db[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.ng(v) {
                            axpy(1.0, &g, self.grad_buf(&mut grads, v));
                        }
                    }
                }
                Op::AddRow(a, bias) => {
                    if self.ng(*a) {
                        axpy(1.0, &g, self.grad_buf(&mut grads, *a));
                    }
                    if self.ng(*bias) {
                        let (r, c) = self.dims(*a);
                        let db = self.grad_buf(&mut grads, *bias);
                        for i in 0..r {
                            axpy(1.0, &g[i * c..(i + 1) * c], db);
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if self.ng(*a) {
                        axpy(*s, &g, self.grad_buf(&mut grads, *a));
                    }
                }
                Op::Relu(a) => {
                    if self.ng(*a) {
                        let x = self.value(*a);
                        let da = self.grad_buf(&mut grads, *a);
                        for ((d, &gv), &xv) in da.iter_mut().zip(&g).zip(x) {
                            if xv > 0.0 {
                                *d += gv;
                            }
                        }
                    }
                }
                Op::Gelu(a) => {
                    if self.ng(*a) {
                        let x = self.value(*a);
                        let da = self.grad_buf(&mut grads, *a);
                        for ((d, &gv), &xv) in da.iter_mut().zip(&g).zip(x) {
                            *d += gv * gelu_grad(xv);
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    let (r, c) = self.dims(*x);
                    if self.ng(*gamma) {
                        let dg = self.grad_buf(&mut grads, *gamma);
                        for i in 0..r {
                            for j in 0..c {
                                dg[j] += g[i * c + j] * xhat[i * c + j];
                            }
                        }
                    }
                    if self.ng(*beta) {
                        let db = self.grad_buf(&mut grads, *beta);
                        for i in 0..r {
                            axpy(1.0, &g[i * c..(i + 1) * c], db);
                        }
                    }
                    if self.ng(*x) {
                        let gm = self.value(*gamma).to_vec();
                        let dx = self.grad_buf(&mut grads, *x);
                        let mut dxhat = vec![0.0; c];
                        for i in 0..r {
                            let h = &xhat[i * c..(i + 1) * c];
                            for j in 0..c {
                                dxhat[j] = g[i * c + j] * gm[j];
                            }
                            let s1: f64 = dxhat.iter().sum();
                            let s2 = dot(&dxhat, h);
                            let k = rstd[i] / c as f64;
                            for j in 0..c {
                                dx[i * c + j] += k * (c as f64 * dxhat[j] - s1 - h[j] * s2);
                            }
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    if self.ng(*x) {
                        let dx = self.grad_buf(&mut grads, *x);
                        for ((d, &gv), &m) in dx.iter_mut().zip(&g).zip(mask) {
                            *d += gv * m;
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    if self.ng(*table) {
                        let c = self.dims(*table).1;
                        let dt = self.grad_buf(&mut grads, *table);
                        for (i, &id) in ids.iter().enumerate() {
                            axpy(1.0, &g[i * c..(i + 1) * c], &mut dt[id * c..(id + 1) * c]);
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let (r, total) = dims2(&node.shape);
                    let mut off = 0;
                    for &p in parts {
                        let w = self.dims(p).1;
                        if self.ng(p) {
                            let dp = self.grad_buf(&mut grads, p);
                            for i in 0..r {
                                axpy(
                                    1.0,
                                    &g[i * total + off..i * total + off + w],
                                    &mut dp[i * w..(i + 1) * w],
                                );
                            }
                        }
                        off += w;
                    }
                }
                Op::Attention { q, k, v, heads, probs } => {
                    self.attention_backward(&mut grads, &g, *q, *k, *v, *heads, probs);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    smoothing,
                    probs,
                    count,
                } => {
                    if self.ng(*logits) && *count > 0 {
                        let vocab = self.dims(*logits).1;
                        let coef = g[0] / *count as f64;
                        let off = smoothing / vocab as f64;
                        let dl = self.grad_buf(&mut grads, *logits);
                        for (i, t) in targets.iter().enumerate() {
                            let Some(t) = *t else { continue };
                            for j in 0..vocab {
                                let q = off + if j == t { 1.0 - smoothing } else { 0.0 };
                                dl[i * vocab + j] += coef * (probs[i * vocab + j] - q);
                            }
                        }
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        if self.ng(v) {
                            self.grad_buf(&mut grads, v)[0] += w * g[0];
                        }
                    }
                }
                Op::Dot(x, w) => {
                    if self.ng(*x) {
                        axpy(g[0], w, self.grad_buf(&mut grads, *x));
                    }
                }
            }
        }
        Ok(Gradients { nodes: grads, params })
    }

    fn grad_buf<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let n = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        grads: &mut [Option<Vec<f64>>],
        g: &[f64],
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: &[f64],
    ) {
        let (tq, d) = self.dims(q);
        let tk = self.dims(k).0;
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut dq = vec![0.0; tq * d];
        let mut dk = vec![0.0; tk * d];
        let mut dv = vec![0.0; tk * d];
        let mut dp = vec![0.0; tk];
        for h in 0..heads {
            let c0 = h * dh;
            for i in 0..tq {
                let prow = &probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                let gi = &g[i * d + c0..i * d + c0 + dh];
                let mut inner = 0.0;
                for j in 0..tk {
                    if prow[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    axpy(prow[j], gi, &mut dv[j * d + c0..j * d + c0 + dh]);
                    dp[j] = dot(gi, &vv[j * d + c0..j * d + c0 + dh]);
                    inner += dp[j] * prow[j];
                }
                for j in 0..tk {
                    if prow[j] == 0.0 {
                        continue;
                    }
                    let ds = prow[j] * (dp[j] - inner) * scale;
                    axpy(
                        ds,
                        &kv[j * d + c0..j * d + c0 + dh],
                        &mut dq[i * d + c0..i * d + c0 + dh],
                    );
                    axpy(
                        ds,
                        &qv[i * d + c0..i * d + c0 + dh],
                        &mut dk[j * d + c0..j * d + c0 + dh],
                    );
                }
            }
        }
        for (var, buf) in [(q, dq), (k, dk), (v, dv)] {
            if self.ng(var) {
                axpy(1.0, &buf, self.grad_buf(grads, var));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Central-difference check of `f` at every entry of every input.
    fn check_grads(inputs: &[Tensor], f: impl Fn(&mut Graph, &[Var]) -> Var) {
        let mut g = Graph::detached(false);
        let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(&x.clone().with_grad())).collect();
        let out = f(&mut g, &vars);
        let grads = g.backward(out).unwrap();
        let h = 1e-4;
        for (which, input) in inputs.iter().enumerate() {
            let analytic = grads.wrt(vars[which]).unwrap().to_vec();
            for e in 0..input.len() {
                let eval = |delta: f64| {
                    let mut g = Graph::detached(false);
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, x)| {
                            let mut x = x.clone();
                            if i == which {
                                x.data_mut()[e] += delta;
                            }
                            g.leaf(&x)
                        })
                        .collect();
                    let out = f(&mut g, &vars);
                    g.scalar(out)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let a = analytic[e];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5);
                assert!(rel <= 1e-3, "input {which}[{e}]: analytic {a} numeric {numeric}");
            }
        }
    }

    fn rand_t(shape: &[usize], seed: u64) -> Tensor {
        Tensor::randn(shape, 1.0, &mut RngStream::new(seed))
    }

    fn proj(len: usize, seed: u64) -> Vec<f64> {
        rand_t(&[len], seed).into_data()
    }

    #[test]
    fn matmul_identity_and_small() {
        let mut g = Graph::detached(false);
        let i2 = g.leaf(&t(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let m = g.leaf(&t(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let p = g.matmul(i2, m).unwrap();
        assert_eq!(g.value(p), &[1.0, 2.0, 3.0, 4.0]);
        let a = g.leaf(&t(&[&[1.0, 2.0]]));
        let b = g.leaf(&t(&[&[3.0], &[4.0]]));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), &[11.0]);
        assert_eq!(g.shape(c), &[1, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::detached(false);
        let a = g.leaf(&Tensor::zeros(&[2, 3]));
        let b = g.leaf(&Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_gradients() {
        let w = proj(12, 3);
        check_grads(&[rand_t(&[4, 5], 1), rand_t(&[5, 3], 2)], |g, v| {
            let p = g.matmul(v[0], v[1]).unwrap();
            g.dot_const(p, &w).unwrap()
        });
    }

    #[test]
    fn elementwise_gradients() {
        let w = proj(12, 9);
        check_grads(&[rand_t(&[3, 4], 4), rand_t(&[3, 4], 5), rand_t(&[4], 6)], |g, v| {
            let s = g.add(v[0], v[1]).unwrap();
            let s = g.add_row(s, v[2]).unwrap();
            let s = g.scale(s, 0.7);
            let a = g.gelu(s);
            let r = g.relu(v[0]);
            let s = g.add(a, r).unwrap();
            g.dot_const(s, &w).unwrap()
        });
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::detached(false);
        let x = g.leaf(&Tensor::full(&[2, 5], 3.25));
        let gamma = g.leaf(&Tensor::full(&[5], 1.0));
        let beta = g.leaf(&Tensor::zeros(&[5]));
        let y = g.layer_norm(x, gamma, beta, 1e-5).unwrap();
        assert!(g.value(y).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn layer_norm_gradients() {
        let w = proj(18, 11);
        check_grads(&[rand_t(&[3, 6], 7), rand_t(&[6], 8), rand_t(&[6], 10)], |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
            g.dot_const(y, &w).unwrap()
        });
    }

    #[test]
    fn gather_and_concat_gradients() {
        let w = proj(4 * 5, 12);
        check_grads(&[rand_t(&[6, 3], 13), rand_t(&[4, 2], 14)], |g, v| {
            let e = g.gather(v[0], &[1, 5, 1, 0]).unwrap();
            let c = g.concat_cols(&[e, v[1]]).unwrap();
            g.dot_const(c, &w).unwrap()
        });
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut g = Graph::detached(false);
        let tab = g.leaf(&Tensor::zeros(&[3, 2]));
        assert!(matches!(g.gather(tab, &[3]), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn attention_gradients() {
        for causal in [false, true] {
            let w = proj(5 * 4, 20);
            check_grads(
                &[rand_t(&[5, 4], 15), rand_t(&[5, 4], 16), rand_t(&[5, 4], 17)],
                |g, v| {
                    let a = g.attention(v[0], v[1], v[2], 2, causal).unwrap();
                    g.dot_const(a, &w).unwrap()
                },
            );
        }
        let w = proj(3 * 4, 21);
        check_grads(
            &[rand_t(&[3, 4], 18), rand_t(&[6, 4], 19), rand_t(&[6, 4], 22)],
            |g, v| {
                let a = g.attention(v[0], v[1], v[2], 4, false).unwrap();
                g.dot_const(a, &w).unwrap()
            },
        );
    }

    #[test]
    fn causal_mask_blocks_future() {
        let mut g = Graph::detached(false);
        let q = g.leaf(&rand_t(&[4, 4], 1));
        let k = g.leaf(&rand_t(&[4, 4], 2));
        let v = g.leaf(&rand_t(&[4, 4], 3));
        let a = g.attention(q, k, v, 2, true).unwrap();
        let (heads, tq, tk, probs) = g.attention_weights(a).unwrap();
        for h in 0..heads {
            for i in 0..tq {
                let row = &probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                for (j, p) in row.iter().enumerate() {
                    if j > i {
                        assert_eq!(*p, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn cross_entropy_uniform_is_ln_v() {
        let mut g = Graph::detached(false);
        let l = g.leaf(&Tensor::full(&[3, 7], 0.4));
        let ce = g.cross_entropy(l, &[Some(0), Some(3), Some(6)], 0.0).unwrap();
        assert!((g.scalar(ce) - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_vanishes_with_large_gap() {
        let mut last = f64::INFINITY;
        for gap in [1.0, 5.0, 10.0, 30.0] {
            let mut g = Graph::detached(false);
            let l = g.leaf(&t(&[&[gap, 0.0, 0.0]]));
            let ce = g.cross_entropy(l, &[Some(0)], 0.0).unwrap();
            assert!(g.scalar(ce) < last);
            last = g.scalar(ce);
        }
        assert!(last < 1e-12);
    }

    #[test]
    fn cross_entropy_smoothed_matches_formula() {
        let logits = [0.3, -1.2, 2.0, 0.5];
        let target = 2;
        let eps = 0.1;
        // direct evaluation of -sum_j q_j log softmax_j
        let z: f64 = logits.iter().map(|x: &f64| x.exp()).sum();
        let mut expected = 0.0;
        for (j, x) in logits.iter().enumerate() {
            let q = eps / 4.0 + if j == target { 1.0 - eps } else { 0.0 };
            expected -= q * (x.exp() / z).ln();
        }
        let mut g = Graph::detached(false);
        let l = g.leaf(&t(&[&logits]));
        let ce = g.cross_entropy(l, &[Some(target)], eps).unwrap();
        assert!((g.scalar(ce) - expected).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_target() {
        let mut g = Graph::detached(false);
        let l = g.leaf(&Tensor::zeros(&[1, 3]));
        assert!(matches!(g.cross_entropy(l, &[Some(3)], 0.0), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn cross_entropy_gradients_with_mask() {
        check_grads(&[rand_t(&[4, 5], 30)], |g, v| {
            g.cross_entropy(v[0], &[Some(1), None, Some(4), Some(0)], 0.1).unwrap()
        });
    }

    #[test]
    fn weighted_sum_gradients() {
        check_grads(&[rand_t(&[2, 3], 31), rand_t(&[2, 3], 32)], |g, v| {
            let a = g.cross_entropy(v[0], &[Some(0), Some(2)], 0.1).unwrap();
            let b = g.cross_entropy(v[1], &[Some(1), Some(1)], 0.0).unwrap();
            g.weighted_sum(&[(a, 0.5), (b, 2.0)]).unwrap()
        });
    }

    #[test]
    fn dropout_is_identity_in_eval_and_seeded_in_train() {
        let x = rand_t(&[4, 4], 40);
        let mut g = Graph::detached(false);
        let v = g.leaf(&x);
        let mut rng = RngStream::new(1);
        assert_eq!(g.dropout(v, 0.3, &mut rng), v);

        let run = || {
            let mut g = Graph::detached(true);
            let v = g.leaf(&x);
            let mut rng = RngStream::new(1);
            let d = g.dropout(v, 0.3, &mut rng);
            g.value(d).to_vec()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().any(|v| *v == 0.0));
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let lp = log_softmax(&[1.0, 2.0, 3.0, -50.0]);
        let s: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
