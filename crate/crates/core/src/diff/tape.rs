//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] is rebuilt for every forward pass. Nodes are appended in
//! topological order, so the backward sweep is a single reverse scan.
//! Rows are batch elements throughout; a scalar is a 1×1 matrix.

use ndarray::{Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Index of a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    AddCol(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Tanh(Var),
    Gelu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    SumCols(Var),
    Mean(Var),
    Sum(Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    BernoulliLogLik(Var, Array2<f64>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::AddRow(..) => "add_row",
            Op::AddCol(..) => "add_col",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Square(..) => "square",
            Op::Tanh(..) => "tanh",
            Op::Gelu(..) => "gelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Gather(..) => "gather",
            Op::Concat(..) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::SumCols(..) => "sum_cols",
            Op::Mean(..) => "mean",
            Op::Sum(..) => "sum",
            Op::Clamp(..) => "clamp",
            Op::Min(..) => "min",
            Op::BernoulliLogLik(..) => "bernoulli_loglik",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Values produced by `stop_gradient`, in call order.
    stops: Vec<Array2<f64>>,
    /// When set, `stop_gradient` returns these values instead of its input.
    replay: Option<Vec<Array2<f64>>>,
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x / SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Row-wise numerically stable log-softmax.
pub fn log_softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = log_softmax_rows(x);
    out.mapv_inplace(f64::exp);
    out
}

/// A NaN or infinity anywhere makes the sum non-finite; a finite sum of
/// finite values is the common case and skips the elementwise scan.
fn all_finite(x: &Array2<f64>) -> bool {
    x.sum().is_finite() || x.iter().all(|v| v.is_finite())
}

fn row_sums(x: &Array2<f64>) -> Array2<f64> {
    x.sum_axis(Axis(1)).insert_axis(Axis(1))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose `stop_gradient` calls return `values` in order, so a
    /// rebuilt graph keeps its cut branches fixed at an earlier evaluation.
    pub fn replaying(values: Vec<Array2<f64>>) -> Self {
        Self {
            replay: Some(values),
            ..Self::default()
        }
    }

    /// Values produced by `stop_gradient` so far.
    pub fn stopped_values(&self) -> &[Array2<f64>] {
        &self.stops
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Const => false,
            Op::Param(_) => true,
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::AddCol(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Min(a, b) => self.rg(*a) || self.rg(*b),
            Op::Scale(a, _)
            | Op::Offset(a)
            | Op::Square(a)
            | Op::Tanh(a)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Gather(a, _)
            | Op::SliceCols(a, _)
            | Op::SumCols(a)
            | Op::Mean(a)
            | Op::Sum(a)
            | Op::Clamp(a, ..)
            | Op::BernoulliLogLik(a, _) => self.rg(*a),
            Op::Concat(vs) => vs.iter().any(|v| self.rg(*v)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.dim(), (1, 1), "scalar() on a non-scalar node");
        val[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Const)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Same forward value as `x`, but no gradient flows back through it.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let n = self.stops.len();
        let v = match &self.replay {
            Some(vals) => {
                let v = vals
                    .get(n)
                    .expect("replayed graph has more stop-gradients")
                    .clone();
                assert_eq!(v.dim(), self.shape(x), "replayed stop-gradient shape");
                v
            }
            None => self.value(x).clone(),
        };
        self.stops.push(v.clone());
        self.push(v, Op::Const)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        assert_eq!(ac, br, "matmul {ar}x{ac} by {br}x{bc}");
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `x` (B×n) plus a row vector `row` (1×n) broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (_, n) = self.shape(x);
        assert_eq!(self.shape(row), (1, n), "add_row shape");
        let v = self.value(x) + self.value(row);
        self.push(v, Op::AddRow(x, row))
    }

    /// `x` (B×n) plus a column `col` (B×1) broadcast over columns.
    pub fn add_col(&mut self, x: Var, col: Var) -> Var {
        let (b, _) = self.shape(x);
        assert_eq!(self.shape(col), (b, 1), "add_col shape");
        let v = self.value(x) + self.value(col);
        self.push(v, Op::AddCol(x, col))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: shape mismatch");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let v = self.value(x) * k;
        self.push(v, Op::Scale(x, k))
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x) + c;
        self.push(v, Op::Offset(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(|a| a * a);
        self.push(v, Op::Square(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::tanh);
        self.push(v, Op::Tanh(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(gelu);
        self.push(v, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(sigmoid);
        self.push(v, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let v = self.value(x).mapv(f64::ln);
        self.push(v, Op::Ln(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let v = softmax_rows(self.value(x));
        self.push(v, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let v = log_softmax_rows(self.value(x));
        self.push(v, Op::LogSoftmax(x))
    }

    /// Picks `x[r, idx[r]]` for every row, giving a B×1 column.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Var {
        let (b, n) = self.shape(x);
        assert_eq!(idx.len(), b, "gather index count");
        let xv = self.value(x);
        let v = Array2::from_shape_fn((b, 1), |(r, _)| {
            assert!(idx[r] < n, "gather index out of range");
            xv[[r, idx[r]]]
        });
        self.push(v, Op::Gather(x, idx.to_vec()))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let b = self.shape(parts[0]).0;
        let n: usize = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, b, "concat row mismatch");
                self.shape(p).1
            })
            .sum();
        let mut v = Array2::zeros((b, n));
        let mut c = 0;
        for &p in parts {
            let w = self.shape(p).1;
            v.slice_mut(ndarray::s![.., c..c + w]).assign(self.value(p));
            c += w;
        }
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end` of `x`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let (_, n) = self.shape(x);
        assert!(
            start < end && end <= n,
            "slice_cols {start}..{end} of {n} columns"
        );
        let v = self.value(x).slice(ndarray::s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(x, start))
    }

    /// Sum across columns: B×n -> B×1.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let v = row_sums(self.value(x));
        self.push(v, Op::SumCols(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x).mean().expect("mean of empty node");
        self.push(Array2::from_elem((1, 1), v), Op::Mean(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).sum();
        self.push(Array2::from_elem((1, 1), v), Op::Sum(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).mapv(|a| a.clamp(lo, hi));
        self.push(v, Op::Clamp(x, lo, hi))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "min");
        let mut v = self.value(a).clone();
        Zip::from(&mut v)
            .and(self.value(b))
            .for_each(|x, &y| *x = x.min(y));
        self.push(v, Op::Min(a, b))
    }

    /// Independent-Bernoulli log-likelihood of `targets` under `logits`,
    /// summed over columns: B×n -> B×1.
    pub fn bernoulli_log_likelihood(&mut self, logits: Var, targets: &Array2<f64>) -> Var {
        assert_eq!(self.shape(logits), targets.dim(), "bernoulli target shape");
        let mut ll = Array2::zeros((targets.nrows(), 1));
        Zip::from(ll.rows_mut())
            .and(self.value(logits).rows())
            .and(targets.rows())
            .for_each(|mut out, l, t| {
                out[0] = l
                    .iter()
                    .zip(t.iter())
                    .map(|(&l, &t)| t * l - softplus(l))
                    .sum();
            });
        self.push(ll, Op::BernoulliLogLik(logits, targets.clone()))
    }

    /// Reverse sweep from a 1×1 root. Gradients are added into the owning
    /// stores' accumulators, so repeated calls accumulate.
    pub fn backward(&self, root: Var, stores: &mut [&mut ParamStore]) -> Result<()> {
        if self.shape(root) != (1, 1) {
            return Err(Error::contract(format!(
                "backward root must be scalar, got {:?}",
                self.shape(root)
            )));
        }
        for (i, n) in self.nodes[..=root.0].iter().enumerate() {
            if !all_finite(&n.value) {
                return Err(Error::NonFinite {
                    what: "value",
                    node: i,
                    op: n.op.name(),
                });
            }
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if !all_finite(&g) {
                return Err(Error::NonFinite {
                    what: "gradient",
                    node: i,
                    op: node.op.name(),
                });
            }
            self.propagate(node, &g, &mut grads, stores)?;
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node,
        g: &Array2<f64>,
        grads: &mut [Option<Array2<f64>>],
        stores: &mut [&mut ParamStore],
    ) -> Result<()> {
        let mut send = |v: Var, d: Array2<f64>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => *acc += &d,
                slot @ None => *slot = Some(d),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Const => {}
            Op::Param(id) => {
                let store = stores
                    .iter_mut()
                    .find(|s| s.id() == id.store)
                    .ok_or_else(|| {
                        Error::contract("backward: a parameter's store was not supplied")
                    })?;
                store.accumulate(id.index, g);
            }
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    send(*a, g.dot(&val(*b).t()));
                }
                if self.rg(*b) {
                    send(*b, val(*a).t().dot(g));
                }
            }
            Op::AddRow(x, row) => {
                send(*x, g.clone());
                if self.rg(*row) {
                    send(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::AddCol(x, col) => {
                send(*x, g.clone());
                if self.rg(*col) {
                    send(*col, row_sums(g));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    send(*a, g * val(*b));
                }
                if self.rg(*b) {
                    send(*b, g * val(*a));
                }
            }
            Op::Scale(x, k) => send(*x, g * *k),
            Op::Offset(x) => send(*x, g.clone()),
            Op::Square(x) => send(*x, g * &(val(*x) * 2.0)),
            Op::Tanh(x) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
                send(*x, d);
            }
            Op::Gelu(x) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(val(*x))
                    .for_each(|d, &a| *d *= gelu_grad(a));
                send(*x, d);
            }
            Op::Sigmoid(x) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                send(*x, d);
            }
            Op::Exp(x) => send(*x, g * &node.value),
            Op::Ln(x) => send(*x, g / val(*x)),
            Op::Softmax(x) => {
                let s = &node.value;
                let dot = row_sums(&(g * s));
                send(*x, s * &(g - &dot));
            }
            Op::LogSoftmax(x) => {
                let s = node.value.mapv(f64::exp);
                let gs = row_sums(g);
                send(*x, g - &(s * &gs));
            }
            Op::Gather(x, idx) => {
                let mut d = Array2::zeros(val(*x).raw_dim());
                for (r, &c) in idx.iter().enumerate() {
                    d[[r, c]] = g[[r, 0]];
                }
                send(*x, d);
            }
            Op::Concat(parts) => {
                let mut c = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    if self.rg(p) {
                        send(p, g.slice(ndarray::s![.., c..c + w]).to_owned());
                    }
                    c += w;
                }
            }
            Op::SliceCols(x, start) => {
                let mut d = Array2::zeros(val(*x).raw_dim());
                let w = g.ncols();
                d.slice_mut(ndarray::s![.., *start..*start + w]).assign(g);
                send(*x, d);
            }
            Op::SumCols(x) => {
                let (_, n) = val(*x).dim();
                let d =
                    ndarray::concatenate(Axis(1), &vec![g.view(); n]).expect("sum_cols broadcast");
                send(*x, d);
            }
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                send(*x, Array2::from_elem(val(*x).raw_dim(), g[[0, 0]] / n));
            }
            Op::Sum(x) => send(*x, Array2::from_elem(val(*x).raw_dim(), g[[0, 0]])),
            Op::Clamp(x, lo, hi) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(val(*x)).for_each(|d, &a| {
                    if a < *lo || a > *hi {
                        *d = 0.0;
                    }
                });
                send(*x, d);
            }
            Op::Min(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if self.rg(*a) {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(va).and(vb).for_each(|d, &x, &y| {
                        if x > y {
                            *d = 0.0;
                        }
                    });
                    send(*a, d);
                }
                if self.rg(*b) {
                    let mut d = g.clone();
                    Zip::from(&mut d).and(va).and(vb).for_each(|d, &x, &y| {
                        if x <= y {
                            *d = 0.0;
                        }
                    });
                    send(*b, d);
                }
            }
            Op::BernoulliLogLik(l, t) => {
                let mut d = t - &val(*l).mapv(sigmoid);
                Zip::from(d.rows_mut())
                    .and(g.rows())
                    .for_each(|mut row, gr| row *= gr[0]);
                send(*l, d);
            }
        }
        Ok(())
    }
}
