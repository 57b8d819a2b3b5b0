//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on a [`Graph`] is a 2-D array; scalars are `1×1`. Operations
//! are appended in evaluation order, so one reverse sweep from the loss
//! node accumulates adjoints for every parameter that fed into it.

use ndarray::{s, Array1, Array2, Axis, Zip};

use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

const BN_EPS: f64 = 1e-5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    SumAll(Var),
    SumCols(Var),
    LogSoftmax(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    SegmentMean(Var, usize),
    Reshape(Var),
    Pick(Var, Vec<usize>),
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Array2<f64>, inv_std: Array1<f64>, train: bool },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Batch statistics observed by a train-mode batch-norm node.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub buffer: usize,
    pub mean: Array1<f64>,
    pub var_unbiased: Array1<f64>,
}

/// Tape of recorded operations.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bn_stats: Vec<BatchStats>,
}

/// Parameter gradients indexed by [`ParamId`]; untouched parameters are zero.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn take_batch_stats(&mut self) -> Vec<BatchStats> {
        std::mem::take(&mut self.bn_stats)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `a + row`, broadcasting a `1×c` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Div(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) + k;
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::exp);
        let ng = self.ng(a);
        self.push(v, Op::Exp(a), ng)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::ln);
        let ng = self.ng(a);
        self.push(v, Op::Ln(a), ng)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums as an `r×1` column.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(v, Op::SumCols(a), ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let ng = self.ng(a);
        self.push(v, Op::LogSoftmax(a), ng)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(1), &[self.value(a).view(), self.value(b).view()])
            .expect("row counts agree");
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::ConcatCols(a, b), ng)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    /// Rows of `a` in the order given by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let v = self.value(a).select(Axis(0), &idx);
        let ng = self.ng(a);
        self.push(v, Op::GatherRows(a, idx), ng)
    }

    /// Mean over consecutive groups of `group` rows.
    pub fn segment_mean(&mut self, a: Var, group: usize) -> Var {
        let src = self.value(a);
        let rows = src.nrows() / group;
        assert_eq!(rows * group, src.nrows(), "rows divisible by group size");
        let mut v = Array2::<f64>::zeros((rows, src.ncols()));
        for (r, mut out) in v.rows_mut().into_iter().enumerate() {
            for k in 0..group {
                out += &src.row(r * group + k);
            }
            out /= group as f64;
        }
        let ng = self.ng(a);
        self.push(v, Op::SegmentMean(a, group), ng)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let src = self.value(a);
        let data: Vec<f64> = src.iter().copied().collect();
        let v = Array2::from_shape_vec((rows, cols), data).expect("element count preserved");
        let ng = self.ng(a);
        self.push(v, Op::Reshape(a), ng)
    }

    /// One element per row: `out[r] = a[r, idx[r]]`, as an `r×1` column.
    pub fn pick(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        let v = Array2::from_shape_fn((src.nrows(), 1), |(r, _)| src[[r, idx[r]]]);
        let ng = self.ng(a);
        self.push(v, Op::Pick(a, idx), ng)
    }

    /// Batch normalization over rows. In train mode the batch statistics are
    /// used and recorded against `buffer`; otherwise the given running
    /// statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        buffer: usize,
        running: Option<(&[f64], &[f64])>,
    ) -> Var {
        let xv = self.value(x);
        let n = xv.nrows() as f64;
        let (mean, var, train) = match running {
            None => {
                let mean = xv.mean_axis(Axis(0)).expect("non-empty batch");
                let var = xv.var_axis(Axis(0), 0.0);
                let unbiased = if n > 1.0 { &var * (n / (n - 1.0)) } else { var.clone() };
                self.bn_stats.push(BatchStats { buffer, mean: mean.clone(), var_unbiased: unbiased });
                (mean, var, true)
            }
            Some((m, v)) => (Array1::from(m.to_vec()), Array1::from(v.to_vec()), false),
        };
        let xv = self.value(x);
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = (xv - &mean) * &inv_std;
        let out = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(out, Op::BatchNorm { x, gamma, beta, xhat, inv_std, train }, ng)
    }

    /// Adjoints of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let n_params = store.len();
        if self.value(loss).dim() != (1, 1) {
            return Err(Error::InvalidArgument("loss must be a 1×1 node".into()));
        }
        if !self.ng(loss) {
            return Err(Error::Disconnected(loss.0));
        }
        let mut adj: Vec<Option<Array2<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Array2::ones((1, 1)));
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n_params];

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let mut acc = |v: Var, d: Array2<f64>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut adj[v.0] {
                    Some(existing) => *existing += &d,
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => match &mut grads[id.0] {
                    Some(existing) => *existing += &g,
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.ng(*b) {
                        acc(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    acc(*a, g);
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, -&g);
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, &g * self.value(*b));
                    }
                    if self.ng(*b) {
                        acc(*b, &g * self.value(*a));
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    if self.ng(*b) {
                        // d(a/b)/db = −out/b
                        acc(*b, -(&g * &node.value) / bv);
                    }
                    if self.ng(*a) {
                        acc(*a, &g / bv);
                    }
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::AddScalar(a) => acc(*a, g),
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(*a, d);
                }
                Op::Exp(a) => acc(*a, g * &node.value),
                Op::Ln(a) => acc(*a, g / self.value(*a)),
                Op::SumAll(a) => {
                    let shape = self.value(*a).dim();
                    acc(*a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::SumCols(a) => {
                    let shape = self.value(*a).dim();
                    let d = Array2::from_shape_fn(shape, |(r, _)| g[[r, 0]]);
                    acc(*a, d);
                }
                Op::LogSoftmax(a) => {
                    // dx = g − softmax · Σ g
                    let mut d = g.clone();
                    for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                        let total: f64 = g.row(r).sum();
                        Zip::from(&mut row).and(node.value.row(r)).for_each(|d, &ls| *d -= ls.exp() * total);
                    }
                    acc(*a, d);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).ncols();
                    if self.ng(*b) {
                        acc(*b, g.slice(s![.., ca..]).to_owned());
                    }
                    if self.ng(*a) {
                        acc(*a, g.slice(s![.., ..ca]).to_owned());
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::<f64>::zeros(self.value(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Array2::<f64>::zeros(self.value(*a).dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut row = d.row_mut(src);
                        row += &g.row(r);
                    }
                    acc(*a, d);
                }
                Op::SegmentMean(a, group) => {
                    let mut d = Array2::<f64>::zeros(self.value(*a).dim());
                    let k = 1.0 / *group as f64;
                    for (r, mut row) in d.rows_mut().into_iter().enumerate() {
                        row.scaled_add(k, &g.row(r / group));
                    }
                    acc(*a, d);
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).dim();
                    let data: Vec<f64> = g.iter().copied().collect();
                    acc(*a, Array2::from_shape_vec(shape, data).expect("same element count"));
                }
                Op::Pick(a, idx) => {
                    let mut d = Array2::<f64>::zeros(self.value(*a).dim());
                    for (r, &c) in idx.iter().enumerate() {
                        d[[r, c]] = g[[r, 0]];
                    }
                    acc(*a, d);
                }
                Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                    if self.ng(*beta) {
                        acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*gamma) {
                        acc(*gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*x) {
                        let dxhat = &g * self.value(*gamma);
                        let d = if *train {
                            let n = g.nrows() as f64;
                            let sum_d = dxhat.sum_axis(Axis(0));
                            let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
                            ((&dxhat * n) - &sum_d - &(xhat * &sum_dx)) * &(inv_std / n)
                        } else {
                            dxhat * inv_std
                        };
                        acc(*x, d);
                    }
                }
            }
        }

        let mut any = false;
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| match g {
                Some(g) => {
                    any = true;
                    g
                }
                None => Array2::zeros(store.value(ParamId(i)).dim()),
            })
            .collect();
        if !any {
            return Err(Error::Disconnected(loss.0));
        }
        Ok(Gradients { grads })
    }
}
