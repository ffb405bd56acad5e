//! Reverse-mode differentiation over a tape of dense matrix operations.
//!
//! A [`Graph`] owns every intermediate value. Operations append a node and
//! return a [`Var`] handle; nodes only ever reference earlier nodes, so the
//! node list is already a topological order and `backward` is a single reverse
//! sweep that visits each node once.

use std::collections::HashMap;

use super::tensor::{matmul, matmul_nt, matmul_tn, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index(i: usize) -> Self {
        Var(i)
    }
}

/// Dimension an axis-wise operation runs along.
///
/// `Rows` runs down dimension 0 (a sum over `Rows` yields a `1 x cols` row);
/// `Cols` runs across dimension 1 (softmax over `Cols` normalizes each row).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Square(Var),
    Sqrt(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumAxis(Var, Axis),
    Mean(Var),
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    Concat(Var, Var, Axis),
    Slice(Var, Axis, usize, usize),
    WeightedSqDist(Var, Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// The tape. Single writer; build one per forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.by_leaf.get(&var)
    }

    /// Gradients for `vars` in order; a leaf the loss does not depend on gets zeros.
    pub fn collect(&self, graph_shapes: &[(Var, [usize; 2])]) -> Vec<Tensor> {
        graph_shapes
            .iter()
            .map(|(v, [r, c])| {
                self.by_leaf
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(*r, *c))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Leaf that gradients are reported for.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn finish(&mut self, name: &str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::Numeric(format!(
                "{name} produced a non-finite value"
            )));
        }
        let needs = self.needs(inputs);
        Ok(self.push(value, op, needs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.shape(a);
        let [k2, n] = self.shape(b);
        if k != k2 {
            return Err(Error::ShapeMismatch(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let out = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.finish("matmul", Tensor::new(m, n, out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transpose();
        self.finish("transpose", out, Op::Transpose(a), &[a])
    }

    fn binary(
        &mut self,
        name: &str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let [ra, ca] = self.shape(a);
        let [rb, cb] = self.shape(b);
        let (r, c) = match (broadcast_dim(ra, rb), broadcast_dim(ca, cb)) {
            (Some(r), Some(c)) => (r, c),
            _ => {
                return Err(Error::ShapeMismatch(format!(
                    "{name} of {ra}x{ca} and {rb}x{cb}"
                )))
            }
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            let ia = if ra == 1 { 0 } else { i * ca };
            let ib = if rb == 1 { 0 } else { i * cb };
            for j in 0..c {
                let x = av[ia + if ca == 1 { 0 } else { j }];
                let y = bv[ib + if cb == 1 { 0 } else { j }];
                out.push(f(x, y));
            }
        }
        self.finish(name, Tensor::new(r, c, out)?, op, &[a, b])
    }

    /// Elementwise sum with 2-D broadcasting of unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(b).data().contains(&0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * factor);
        self.finish("scale", out, Op::Scale(a, factor), &[a])
    }

    pub fn offset(&mut self, a: Var, shift: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + shift);
        self.finish("offset", out, Op::Offset(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.finish("exp", out, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data().iter().find(|&&x| x <= 0.0) {
            return Err(Error::Domain(format!("log of nonpositive value {x}")));
        }
        let out = self.value(a).map(f64::ln);
        self.finish("log", out, Op::Log(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.finish("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.finish("tanh", out, Op::Tanh(a), &[a])
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(softplus);
        self.finish("softplus", out, Op::Softplus(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x * x);
        self.finish("square", out, Op::Square(a), &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data().iter().find(|&&x| x < 0.0) {
            return Err(Error::Domain(format!("sqrt of negative value {x}")));
        }
        let out = self.value(a).map(f64::sqrt);
        self.finish("sqrt", out, Op::Sqrt(a), &[a])
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::contract(format!("clamp bounds {lo} > {hi}")));
        }
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.finish("clamp", out, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.finish("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn sum_axis(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let out = match axis {
            Axis::Rows => {
                let mut acc = vec![0.0; c];
                for i in 0..r {
                    for (o, &x) in acc.iter_mut().zip(t.row_slice(i)) {
                        *o += x;
                    }
                }
                Tensor::row(acc)
            }
            Axis::Cols => Tensor::column((0..r).map(|i| t.row_slice(i).iter().sum()).collect()),
        };
        self.finish("sum_axis", out, Op::SumAxis(a, axis), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        self.finish("mean", Tensor::scalar(m), Op::Mean(a), &[a])
    }

    fn softmax_values(t: &Tensor, axis: Axis, log: bool) -> Tensor {
        // Work row-wise on a transposed copy for the Rows axis.
        let src = match axis {
            Axis::Cols => t.clone(),
            Axis::Rows => t.transpose(),
        };
        let mut out = src.clone();
        for i in 0..src.rows() {
            let row = src.row_slice(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for (j, &x) in row.iter().enumerate() {
                let v = if log { x - lse } else { (x - lse).exp() };
                out.set(i, j, v);
            }
        }
        match axis {
            Axis::Cols => out,
            Axis::Rows => out.transpose(),
        }
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let out = Self::softmax_values(self.value(a), axis, false);
        self.finish("softmax", out, Op::Softmax(a, axis), &[a])
    }

    /// `log(softmax(a))` computed without forming the softmax.
    pub fn log_softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let out = Self::softmax_values(self.value(a), axis, true);
        self.finish("log_softmax", out, Op::LogSoftmax(a, axis), &[a])
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: Axis) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let out = match axis {
            Axis::Rows => {
                if ta.cols() != tb.cols() {
                    return Err(Error::ShapeMismatch(format!(
                        "row concat of {:?} and {:?}",
                        ta.shape(),
                        tb.shape()
                    )));
                }
                let mut data = ta.data().to_vec();
                data.extend_from_slice(tb.data());
                Tensor::new(ta.rows() + tb.rows(), ta.cols(), data)?
            }
            Axis::Cols => {
                if ta.rows() != tb.rows() {
                    return Err(Error::ShapeMismatch(format!(
                        "column concat of {:?} and {:?}",
                        ta.shape(),
                        tb.shape()
                    )));
                }
                let mut data = Vec::with_capacity(ta.len() + tb.len());
                for i in 0..ta.rows() {
                    data.extend_from_slice(ta.row_slice(i));
                    data.extend_from_slice(tb.row_slice(i));
                }
                Tensor::new(ta.rows(), ta.cols() + tb.cols(), data)?
            }
        };
        self.finish("concat", out, Op::Concat(a, b, axis), &[a, b])
    }

    /// Half-open range `[start, end)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let limit = match axis {
            Axis::Rows => t.rows(),
            Axis::Cols => t.cols(),
        };
        if start > end || end > limit {
            return Err(Error::ShapeMismatch(format!(
                "slice {start}..{end} of axis with length {limit}"
            )));
        }
        let out = match axis {
            Axis::Rows => Tensor::new(
                end - start,
                t.cols(),
                t.data()[start * t.cols()..end * t.cols()].to_vec(),
            )?,
            Axis::Cols => {
                let mut data = Vec::with_capacity(t.rows() * (end - start));
                for i in 0..t.rows() {
                    data.extend_from_slice(&t.row_slice(i)[start..end]);
                }
                Tensor::new(t.rows(), end - start, data)?
            }
        };
        self.finish("slice", out, Op::Slice(a, axis, start, end), &[a])
    }

    /// `out[i][c] = sum_d weights[c][d] * (points[i][d] - centers[c][d])^2`.
    ///
    /// Pairwise weighted squared distance between `n x d` points and `k x d`
    /// centers, each center carrying its own per-dimension weights.
    pub fn weighted_sq_dist(&mut self, points: Var, centers: Var, weights: Var) -> Result<Var> {
        let [n, d] = self.shape(points);
        let [k, d2] = self.shape(centers);
        if d != d2 || self.shape(weights) != [k, d] {
            return Err(Error::ShapeMismatch(format!(
                "weighted_sq_dist of {:?}, {:?}, {:?}",
                self.shape(points),
                self.shape(centers),
                self.shape(weights)
            )));
        }
        let (z, m, w) = (
            self.value(points).data(),
            self.value(centers).data(),
            self.value(weights).data(),
        );
        let mut out = vec![0.0; n * k];
        for i in 0..n {
            let zi = &z[i * d..(i + 1) * d];
            for c in 0..k {
                let mc = &m[c * d..(c + 1) * d];
                let wc = &w[c * d..(c + 1) * d];
                out[i * k + c] = (0..d).map(|j| wc[j] * (zi[j] - mc[j]).powi(2)).sum();
            }
        }
        let op = Op::WeightedSqDist(points, centers, weights);
        self.finish(
            "weighted_sq_dist",
            Tensor::new(n, k, out)?,
            op,
            &[points, centers, weights],
        )
    }

    /// Runs the reverse sweep from a scalar `loss` and consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let nodes = &self.nodes;

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[idx] = Some(g);
                continue;
            }
            let out = &node.value;
            let mut acc = |v: Var, contrib: Vec<f64>| {
                if !nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => {
                        for (e, c) in existing.iter_mut().zip(contrib) {
                            *e += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |v: Var| &nodes[v.0].value;
            let unary = |v: Var, f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
                // f(input, output) is the local derivative.
                val(v)
                    .data()
                    .iter()
                    .zip(out.data())
                    .zip(&g)
                    .map(|((&x, &y), &gy)| gy * f(x, y))
                    .collect()
            };

            match node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let [m, k] = val(a).shape();
                    let n = val(b).cols();
                    if nodes[a.0].needs_grad {
                        acc(a, matmul_nt(&g, val(b).data(), m, n, k));
                    }
                    if nodes[b.0].needs_grad {
                        acc(b, matmul_tn(val(a).data(), &g, m, k, n));
                    }
                }
                Op::Transpose(a) => {
                    let gt = Tensor::new(out.rows(), out.cols(), g).expect("shape");
                    acc(a, gt.transpose().into_data());
                }
                Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                    let (c, r) = (out.cols(), out.rows());
                    let (ta, tb) = (val(a), val(b));
                    let mut ga = vec![0.0; ta.len()];
                    let mut gb = vec![0.0; tb.len()];
                    let idx_of = |t: &Tensor, i: usize, j: usize| {
                        (if t.rows() == 1 { 0 } else { i }) * t.cols()
                            + if t.cols() == 1 { 0 } else { j }
                    };
                    for i in 0..r {
                        for j in 0..c {
                            let gy = g[i * c + j];
                            let (ia, ib) = (idx_of(ta, i, j), idx_of(tb, i, j));
                            let (x, y) = (ta.data()[ia], tb.data()[ib]);
                            let (da, db) = match node.op {
                                Op::Add(..) => (1.0, 1.0),
                                Op::Sub(..) => (1.0, -1.0),
                                Op::Mul(..) => (y, x),
                                _ => (1.0 / y, -x / (y * y)),
                            };
                            ga[ia] += gy * da;
                            gb[ib] += gy * db;
                        }
                    }
                    acc(a, ga);
                    acc(b, gb);
                }
                Op::Scale(a, f) => acc(a, g.iter().map(|x| x * f).collect()),
                Op::Offset(a) => acc(a, g),
                Op::Exp(a) => acc(a, unary(a, &|_, y| y)),
                Op::Log(a) => acc(a, unary(a, &|x, _| 1.0 / x)),
                Op::Sigmoid(a) => acc(a, unary(a, &|_, y| y * (1.0 - y))),
                Op::Tanh(a) => acc(a, unary(a, &|_, y| 1.0 - y * y)),
                Op::Softplus(a) => acc(a, unary(a, &|x, _| sigmoid(x))),
                Op::Square(a) => acc(a, unary(a, &|x, _| 2.0 * x)),
                Op::Sqrt(a) => acc(a, unary(a, &|_, y| 0.5 / y)),
                Op::Clamp(a, lo, hi) => acc(
                    a,
                    unary(a, &|x, _| if x >= lo && x <= hi { 1.0 } else { 0.0 }),
                ),
                Op::Sum(a) => acc(a, vec![g[0]; val(a).len()]),
                Op::Mean(a) => {
                    let n = val(a).len();
                    acc(a, vec![g[0] / n as f64; n]);
                }
                Op::SumAxis(a, axis) => {
                    let [r, c] = val(a).shape();
                    let mut ga = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] = match axis {
                                Axis::Rows => g[j],
                                Axis::Cols => g[i],
                            };
                        }
                    }
                    acc(a, ga);
                }
                Op::Softmax(a, axis) | Op::LogSoftmax(a, axis) => {
                    let is_log = matches!(node.op, Op::LogSoftmax(..));
                    let [r, c] = out.shape();
                    let mut ga = vec![0.0; r * c];
                    let (outer, inner) = match axis {
                        Axis::Cols => (r, c),
                        Axis::Rows => (c, r),
                    };
                    let at = |o: usize, i: usize| match axis {
                        Axis::Cols => o * c + i,
                        Axis::Rows => i * c + o,
                    };
                    for o in 0..outer {
                        if is_log {
                            let gsum: f64 = (0..inner).map(|i| g[at(o, i)]).sum();
                            for i in 0..inner {
                                let p = out.data()[at(o, i)].exp();
                                ga[at(o, i)] = g[at(o, i)] - p * gsum;
                            }
                        } else {
                            let dot: f64 =
                                (0..inner).map(|i| g[at(o, i)] * out.data()[at(o, i)]).sum();
                            for i in 0..inner {
                                ga[at(o, i)] = out.data()[at(o, i)] * (g[at(o, i)] - dot);
                            }
                        }
                    }
                    acc(a, ga);
                }
                Op::Concat(a, b, axis) => {
                    let (ta, tb) = (val(a), val(b));
                    match axis {
                        Axis::Rows => {
                            let split = ta.len();
                            acc(a, g[..split].to_vec());
                            acc(b, g[split..].to_vec());
                        }
                        Axis::Cols => {
                            let (ca, cb) = (ta.cols(), tb.cols());
                            let mut ga = Vec::with_capacity(ta.len());
                            let mut gb = Vec::with_capacity(tb.len());
                            for row in g.chunks(ca + cb) {
                                ga.extend_from_slice(&row[..ca]);
                                gb.extend_from_slice(&row[ca..]);
                            }
                            acc(a, ga);
                            acc(b, gb);
                        }
                    }
                }
                Op::Slice(a, axis, start, end) => {
                    let [r, c] = val(a).shape();
                    let mut ga = vec![0.0; r * c];
                    match axis {
                        Axis::Rows => ga[start * c..end * c].copy_from_slice(&g),
                        Axis::Cols => {
                            let w = end - start;
                            for i in 0..r {
                                ga[i * c + start..i * c + end]
                                    .copy_from_slice(&g[i * w..(i + 1) * w]);
                            }
                        }
                    }
                    acc(a, ga);
                }
                Op::WeightedSqDist(p, m, w) => {
                    let [n, d] = val(p).shape();
                    let k = val(m).rows();
                    let (z, mu, wt) = (val(p).data(), val(m).data(), val(w).data());
                    let mut gz = vec![0.0; n * d];
                    let mut gm = vec![0.0; k * d];
                    let mut gw = vec![0.0; k * d];
                    for i in 0..n {
                        for c in 0..k {
                            let gy = g[i * k + c];
                            if gy == 0.0 {
                                continue;
                            }
                            for j in 0..d {
                                let diff = z[i * d + j] - mu[c * d + j];
                                let t = 2.0 * gy * wt[c * d + j] * diff;
                                gz[i * d + j] += t;
                                gm[c * d + j] -= t;
                                gw[c * d + j] += gy * diff * diff;
                            }
                        }
                    }
                    acc(p, gz);
                    acc(m, gm);
                    acc(w, gw);
                }
            }
        }

        let mut by_leaf = HashMap::new();
        for (idx, slot) in grads.into_iter().enumerate() {
            if let Some(g) = slot {
                let node = &nodes[idx];
                if matches!(node.op, Op::Leaf) && node.needs_grad {
                    let [r, c] = node.value.shape();
                    by_leaf.insert(Var(idx), Tensor::new(r, c, g)?);
                }
            }
        }
        Ok(Gradients { by_leaf })
    }
}
