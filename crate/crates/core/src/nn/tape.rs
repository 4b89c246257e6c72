//! Reverse-mode automatic differentiation over dense `f64` vectors.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! read from a borrowed [`ParamStore`] without copying; calling
//! [`Tape::backward`] accumulates their gradients into a [`Gradients`].

use super::params::{Gradients, ParamId, ParamStore};
use super::softplus_scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    MatVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Log(Var),
    Recip(Var),
    Square(Var),
    Concat(Vec<Var>),
    Row(Var, usize),
    Sum(Var),
    CrossEntropy { logits: Var, target: usize, softmax: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, rows: usize, cols: usize, op: Op, requires_grad: bool) -> Var {
        debug_assert!(matches!(op, Op::Param(_)) || value.len() == rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => &self.store.get(id).values,
            _ => &node.value,
        }
    }

    pub fn dim(&self, v: Var) -> usize {
        let n = &self.nodes[v.0];
        n.rows * n.cols
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        debug_assert_eq!(self.dim(v), 1);
        self.value(v)[0]
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        let n = value.len();
        self.push(value, n, 1, Op::Const, false)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.constant(vec![0.0; n])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let t = self.store.get(id);
        let (rows, cols) = (t.rows, t.cols);
        let v = self.push(Vec::new(), rows, cols, Op::Param(id), true);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (rows, cols) = self.shape(w);
        assert_eq!(cols, self.dim(x), "matvec: inner dimension");
        let wv = self.value(w);
        let xv = self.value(x);
        let out: Vec<f64> = wv
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        let rg = self.rg(w) || self.rg(x);
        self.push(out, rows, 1, Op::MatVec(w, x), rg)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.dim(a), self.dim(b), "elementwise op: length");
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| f(*x, *y)).collect();
        let n = out.len();
        let rg = self.rg(a) || self.rg(b);
        self.push(out, n, 1, op, rg)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| f(*x)).collect();
        let n = out.len();
        let rg = self.rg(a);
        self.push(out, n, 1, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x * k, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| x + k, Op::AddScalar(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus_scalar, Op::Softplus(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 / x, Op::Recip(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::with_capacity(parts.iter().map(|&p| self.dim(p)).sum());
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(out, n, 1, Op::Concat(parts.to_vec()), rg)
    }

    /// Row `i` of a matrix as a vector (embedding lookup).
    pub fn row(&mut self, w: Var, i: usize) -> Var {
        let (rows, cols) = self.shape(w);
        assert!(i < rows, "row index {i} out of range {rows}");
        let out = self.value(w)[i * cols..(i + 1) * cols].to_vec();
        let rg = self.rg(w);
        self.push(out, cols, 1, Op::Row(w, i), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![s], 1, 1, Op::Sum(a), rg)
    }

    pub fn add_all(&mut self, terms: &[Var]) -> Var {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// `-ln softmax(logits)[target]`, computed via log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let lv = self.value(logits);
        assert!(target < lv.len(), "cross_entropy target out of range");
        let softmax = softmax(lv);
        let loss = log_sum_exp(lv) - lv[target];
        let rg = self.rg(logits);
        self.push(vec![loss], 1, 1, Op::CrossEntropy { logits, target, softmax }, rg)
    }

    /// Propagates d(loss)/d(node) back through the tape; parameter gradients
    /// are added into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut Gradients) {
        assert_eq!(self.dim(loss), 1, "backward expects a scalar");
        let mut node_grads: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        node_grads[loss.0] = vec![1.0];

        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut node_grads[i]);
            if g.is_empty() || !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Const | Op::Param(_) => {}
                Op::MatVec(w, x) => {
                    let (rows, cols) = self.shape(*w);
                    if self.rg(*w) {
                        let xv = self.value(*x);
                        let gw = self.slot(&mut node_grads, grads, *w);
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for (dst, xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                *dst += gr * xi;
                            }
                        }
                    }
                    if self.rg(*x) {
                        let wv = self.value(*w);
                        let gx = self.slot(&mut node_grads, grads, *x);
                        for r in 0..rows {
                            let gr = g[r];
                            if gr == 0.0 {
                                continue;
                            }
                            for (dst, wi) in gx.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                                *dst += gr * wi;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, _| g);
                    self.accumulate(&mut node_grads, grads, *b, &g, |g, _| g);
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, _| g);
                    self.accumulate(&mut node_grads, grads, *b, &g, |g, _| -g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, k| g * bv[k]);
                    self.accumulate(&mut node_grads, grads, *b, &g, |g, k| g * av[k]);
                }
                Op::Scale(a, s) => {
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, _| g * s);
                }
                Op::AddScalar(a) => {
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, _| g);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, k| g * (1.0 - y[k] * y[k]));
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, k| g * y[k] * (1.0 - y[k]));
                }
                Op::Softplus(a) => {
                    let x = self.value(*a);
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, k| g * sigmoid(x[k]));
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, k| g / x[k]);
                }
                Op::Recip(a) => {
                    let y = &node.value;
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, k| -g * y[k] * y[k]);
                }
                Op::Square(a) => {
                    let x = self.value(*a);
                    self.accumulate(&mut node_grads, grads, *a, &g, |g, k| 2.0 * g * x[k]);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.dim(p);
                        if self.rg(p) {
                            let seg = &g[offset..offset + n];
                            self.accumulate(&mut node_grads, grads, p, seg, |g, _| g);
                        }
                        offset += n;
                    }
                }
                Op::Row(w, r) => {
                    if self.rg(*w) {
                        let cols = self.shape(*w).1;
                        let gw = self.slot(&mut node_grads, grads, *w);
                        for (dst, gi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(&g) {
                            *dst += gi;
                        }
                    }
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    let n = self.dim(*a);
                    let ones = vec![g0; n];
                    self.accumulate(&mut node_grads, grads, *a, &ones, |g, _| g);
                }
                Op::CrossEntropy { logits, target, softmax } => {
                    let g0 = g[0];
                    let t = *target;
                    let gl: Vec<f64> = softmax
                        .iter()
                        .enumerate()
                        .map(|(k, p)| g0 * (p - if k == t { 1.0 } else { 0.0 }))
                        .collect();
                    self.accumulate(&mut node_grads, grads, *logits, &gl, |g, _| g);
                }
            }
        }
    }

    /// Gradient buffer for `v`: the parameter's accumulator for parameter
    /// nodes, otherwise the (lazily zeroed) per-node buffer.
    fn slot<'a>(&self, node_grads: &'a mut [Vec<f64>], grads: &'a mut Gradients, v: Var) -> &'a mut [f64] {
        if let Op::Param(id) = self.nodes[v.0].op {
            return grads.get_mut(id);
        }
        let buf = &mut node_grads[v.0];
        if buf.is_empty() {
            *buf = vec![0.0; self.dim(v)];
        }
        buf
    }

    fn accumulate(
        &self,
        node_grads: &mut [Vec<f64>],
        grads: &mut Gradients,
        target: Var,
        upstream: &[f64],
        f: impl Fn(f64, usize) -> f64,
    ) {
        if !self.rg(target) {
            return;
        }
        let dst = self.slot(node_grads, grads, target);
        for (k, (d, g)) in dst.iter_mut().zip(upstream).enumerate() {
            *d += f(*g, k);
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

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn log_softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| x - lse).collect()
}
