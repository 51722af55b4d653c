//! Tape-based reverse-mode differentiation over vectors.
//!
//! Every node holds a 1-D value. Parameters never get copied onto the tape
//! wholesale; ops such as [`Tape::matvec`] and [`Tape::row`] read them from
//! the borrowed [`ParamStore`] and write gradients straight into a
//! [`Gradients`] buffer during [`Tape::backward`].
//!
//! Inputs of a node always have smaller indices than the node itself, so the
//! recorded graph is acyclic and the reverse sweep is a plain reverse loop.

use std::sync::Arc;

use super::ops::{dot, log_sigmoid, masked_log_softmax, sigmoid, softmax_in_place};
use super::tensor::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Row {
        param: ParamId,
        row: usize,
    },
    MatVec {
        param: ParamId,
        col_start: usize,
        x: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    LogSigmoid(Var),
    Slice {
        x: Var,
        start: usize,
    },
    Concat(Vec<Var>),
    Softmax(Var),
    LogSoftmaxPick {
        x: Var,
        target: usize,
        mask: Option<Arc<[bool]>>,
    },
    WeightedSum {
        weights: Var,
        rows: Vec<Var>,
    },
    Dot(Var, Var),
    Sum(Var),
    SumAll(Vec<Var>),
    SquaredNorm(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Records a forward computation against an immutable parameter snapshot.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].value.len()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.push(vec![0.0; n], Op::Input)
    }

    /// Whole parameter, flattened.
    pub fn param(&mut self, p: ParamId) -> Var {
        let value = self.params.get(p).data().to_vec();
        self.push(value, Op::Param(p))
    }

    pub fn row(&mut self, p: ParamId, row: usize) -> Result<Var> {
        let t = self.params.get(p);
        if row >= t.rows() {
            return Err(Error::OutOfRange {
                what: "lookup table",
                index: row,
                size: t.rows(),
            });
        }
        let value = t.row(row).to_vec();
        Ok(self.push(value, Op::Row { param: p, row }))
    }

    /// `W · x` for a 2-D parameter `W`.
    pub fn matvec(&mut self, p: ParamId, x: Var) -> Result<Var> {
        self.matvec_cols(p, 0, x)
    }

    /// `W[:, col_start .. col_start + dim(x)] · x`.
    pub fn matvec_cols(&mut self, p: ParamId, col_start: usize, x: Var) -> Result<Var> {
        let w = self.params.get(p);
        let n = self.dim(x);
        let cols = w.cols();
        if col_start + n > cols {
            return Err(Error::Shape(format!(
                "{}: columns {}..{} exceed {}",
                self.params.name(p),
                col_start,
                col_start + n,
                cols
            )));
        }
        let xv = &self.nodes[x.0].value;
        let value = (0..w.rows())
            .map(|r| dot(&w.row(r)[col_start..col_start + n], xv))
            .collect();
        Ok(self.push(
            value,
            Op::MatVec {
                param: p,
                col_start,
                x,
            },
        ))
    }

    fn same_dim(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.dim(a) != self.dim(b) {
            return Err(Error::Shape(format!(
                "{what}: {} vs {}",
                self.dim(a),
                self.dim(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dim(a, b, "add")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dim(a, b, "sub")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dim(a, b, "mul")?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).iter().map(|x| x * factor).collect();
        self.push(value, Op::Scale(a, factor))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(value, Op::Tanh(a))
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).iter().map(|&x| log_sigmoid(x)).collect();
        self.push(value, Op::LogSigmoid(a))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        if start + len > self.dim(a) || len == 0 {
            return Err(Error::Shape(format!(
                "slice {start}..{} of length {}",
                start + len,
                self.dim(a)
            )));
        }
        let value = self.value(a)[start..start + len].to_vec();
        Ok(self.push(value, Op::Slice { x: a, start }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut value = Vec::with_capacity(parts.iter().map(|&p| self.dim(p)).sum());
        for &p in parts {
            value.extend_from_slice(self.value(p));
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).to_vec();
        softmax_in_place(&mut value);
        self.push(value, Op::Softmax(a))
    }

    /// `log softmax(a)[target]`, optionally restricted to the entries where
    /// `mask` is true (the others get probability zero).
    pub fn log_softmax_pick(
        &mut self,
        a: Var,
        target: usize,
        mask: Option<Arc<[bool]>>,
    ) -> Result<Var> {
        let n = self.dim(a);
        if target >= n {
            return Err(Error::OutOfRange {
                what: "softmax target",
                index: target,
                size: n,
            });
        }
        if let Some(m) = &mask {
            if m.len() != n {
                return Err(Error::Shape(format!("mask {} vs scores {n}", m.len())));
            }
            if !m[target] {
                return Err(Error::Invalid(format!("target {target} is masked out")));
            }
        }
        let logp = masked_log_softmax(self.value(a), mask.as_deref());
        let value = vec![logp[target]];
        Ok(self.push(value, Op::LogSoftmaxPick { x: a, target, mask }))
    }

    /// `Σ weights[i] · rows[i]`.
    pub fn weighted_sum(&mut self, weights: Var, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() || self.dim(weights) != rows.len() {
            return Err(Error::Shape(format!(
                "weighted sum of {} rows with {} weights",
                rows.len(),
                self.dim(weights)
            )));
        }
        let d = self.dim(rows[0]);
        if rows.iter().any(|&r| self.dim(r) != d) {
            return Err(Error::Shape("weighted sum rows differ in size".into()));
        }
        let mut value = vec![0.0; d];
        let w = self.value(weights);
        for (&wi, &r) in w.iter().zip(rows) {
            for (o, x) in value.iter_mut().zip(&self.nodes[r.0].value) {
                *o += wi * x;
            }
        }
        Ok(self.push(
            value,
            Op::WeightedSum {
                weights,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_dim(a, b, "dot")?;
        let value = vec![dot(self.value(a), self.value(b))];
        Ok(self.push(value, Op::Dot(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = vec![self.value(a).iter().sum()];
        self.push(value, Op::Sum(a))
    }

    /// Elementwise sum of equally sized nodes.
    pub fn sum_all(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::Empty("sum of zero terms".into()));
        };
        let d = self.dim(first);
        let mut value = vec![0.0; d];
        for &p in parts {
            if self.dim(p) != d {
                return Err(Error::Shape("sum_all operands differ in size".into()));
            }
            for (o, x) in value.iter_mut().zip(&self.nodes[p.0].value) {
                *o += x;
            }
        }
        Ok(self.push(value, Op::SumAll(parts.to_vec())))
    }

    pub fn squared_norm(&mut self, a: Var) -> Var {
        let value = vec![self.value(a).iter().map(|x| x * x).sum()];
        self.push(value, Op::SquaredNorm(a))
    }

    /// Reverse sweep from a scalar node. Gradients of parameters used more
    /// than once are summed; parameters the loss never touched stay zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut out = Gradients::for_store(self.params);
        self.backward_into(loss, &mut out)?;
        Ok(out)
    }

    pub fn backward_into(&self, loss: Var, out: &mut Gradients) -> Result<()> {
        if self.dim(loss) != 1 {
            return Err(Error::Shape(format!(
                "loss must be scalar, got dimension {}",
                self.dim(loss)
            )));
        }
        if !self.scalar(loss).is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", self.scalar(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => {
                    for (d, x) in out.slot(*p).iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                Op::Row { param, row } => {
                    let cols = self.params.get(*param).cols();
                    let slot = &mut out.slot(*param)[row * cols..(row + 1) * cols];
                    for (d, x) in slot.iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                Op::MatVec {
                    param,
                    col_start,
                    x,
                } => {
                    let w = self.params.get(*param);
                    let cols = w.cols();
                    let xv = &self.nodes[x.0].value;
                    let n = xv.len();
                    let mut dx = vec![0.0; n];
                    let dw = out.slot(*param);
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        let base = r * cols + col_start;
                        let wrow = &w.data()[base..base + n];
                        let dwrow = &mut dw[base..base + n];
                        for j in 0..n {
                            dwrow[j] += gr * xv[j];
                            dx[j] += gr * wrow[j];
                        }
                    }
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let da: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Scale(a, f) => {
                    let da: Vec<f64> = g.iter().map(|v| v * f).collect();
                    accumulate(&mut grads, *a, &da);
                }
                Op::Sigmoid(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *a, &da);
                }
                Op::Tanh(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(g, y)| g * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *a, &da);
                }
                Op::LogSigmoid(a) => {
                    let xv = &self.nodes[a.0].value;
                    let da: Vec<f64> = g.iter().zip(xv).map(|(g, &x)| g * sigmoid(-x)).collect();
                    accumulate(&mut grads, *a, &da);
                }
                Op::Slice { x, start } => {
                    let n = self.dim(*x);
                    let mut dx = vec![0.0; n];
                    dx[*start..start + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *x, &dx);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.dim(p);
                        accumulate(&mut grads, p, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let gy = dot(&g, y);
                    let da: Vec<f64> = g.iter().zip(y).map(|(g, y)| y * (g - gy)).collect();
                    accumulate(&mut grads, *a, &da);
                }
                Op::LogSoftmaxPick { x, target, mask } => {
                    let logp = masked_log_softmax(&self.nodes[x.0].value, mask.as_deref());
                    let gs = g[0];
                    let da: Vec<f64> = logp
                        .iter()
                        .enumerate()
                        .map(|(j, &lp)| {
                            let p = if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() };
                            let ind = if j == *target { 1.0 } else { 0.0 };
                            gs * (ind - p)
                        })
                        .collect();
                    accumulate(&mut grads, *x, &da);
                }
                Op::WeightedSum { weights, rows } => {
                    let w = &self.nodes[weights.0].value;
                    let dw: Vec<f64> = rows
                        .iter()
                        .map(|r| dot(&g, &self.nodes[r.0].value))
                        .collect();
                    for (&wi, &r) in w.iter().zip(rows) {
                        let dr: Vec<f64> = g.iter().map(|v| v * wi).collect();
                        accumulate(&mut grads, r, &dr);
                    }
                    accumulate(&mut grads, *weights, &dw);
                }
                Op::Dot(a, b) => {
                    let da: Vec<f64> = self.nodes[b.0].value.iter().map(|v| v * g[0]).collect();
                    let db: Vec<f64> = self.nodes[a.0].value.iter().map(|v| v * g[0]).collect();
                    accumulate(&mut grads, *a, &da);
                    accumulate(&mut grads, *b, &db);
                }
                Op::Sum(a) => {
                    let da = vec![g[0]; self.dim(*a)];
                    accumulate(&mut grads, *a, &da);
                }
                Op::SumAll(parts) => {
                    for &p in parts {
                        accumulate(&mut grads, p, &g);
                    }
                }
                Op::SquaredNorm(a) => {
                    let da: Vec<f64> = self.nodes[a.0].value.iter().map(|x| 2.0 * g[0] * x).collect();
                    accumulate(&mut grads, *a, &da);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}
