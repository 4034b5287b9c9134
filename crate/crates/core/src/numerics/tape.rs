//! Reverse-mode differentiation over a recorded list of matrix primitives.
//!
//! Every primitive is applied eagerly when it is pushed, and the record keeps
//! enough information to replay the forward pass or run the chain rule
//! backwards. Node ids are assigned in push order, so the record is
//! topologically sorted by construction.

use std::sync::Arc;

use super::tensor::gemm;
use super::{GradientMap, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    n_cols: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(col, weight)` entries.
    pub fn from_rows(n_cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in rows {
            for (c, w) in row {
                assert!(c < n_cols, "sparse column out of range");
                cols.push(c);
                weights.push(w);
            }
            offsets.push(cols.len());
        }
        SparseMatrix {
            n_cols,
            offsets,
            cols,
            weights,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.cols[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    /// `self * x` for a dense `n_cols x d` matrix.
    pub fn mul_dense(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.rows(), self.n_cols, "sparse product row mismatch");
        let d = x.cols();
        let mut out = Tensor::zeros(vec![self.n_rows(), d]);
        for r in 0..self.n_rows() {
            let dst = out.row_mut(r);
            for (c, w) in self.row(r) {
                for (o, v) in dst.iter_mut().zip(x.row(c)) {
                    *o += w * v;
                }
            }
        }
        out
    }

    /// `self^T * g` for a dense `n_rows x d` matrix.
    pub fn mul_dense_transposed(&self, g: &Tensor) -> Tensor {
        assert_eq!(g.rows(), self.n_rows(), "sparse transpose row mismatch");
        let d = g.cols();
        let mut out = Tensor::zeros(vec![self.n_cols, d]);
        for r in 0..self.n_rows() {
            let src = g.row(r);
            for (c, w) in self.row(r) {
                for (o, v) in out.row_mut(c).iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        out
    }
}

/// Partition of consecutive rows into groups; groups may be empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
}

impl Segments {
    pub fn from_lengths(lengths: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(lengths.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &l in lengths {
            acc += l;
            offsets.push(acc);
        }
        Segments { offsets }
    }

    pub fn count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn range(&self, s: usize) -> std::ops::Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn len_of(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    /// Segment index of every row, in row order.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total());
        for s in 0..self.count() {
            out.extend(std::iter::repeat_n(s, self.len_of(s)));
        }
        out
    }
}

#[derive(Clone, Debug)]
enum Op {
    Param(ParamId),
    Const,
    GatherRows(Var, Arc<Vec<usize>>),
    Aggregate(Var, Arc<SparseMatrix>),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Affine(Var, f64, f64),
    Mul(Var, Var),
    ScaleRows(Var, Var),
    MatMul(Var, Var),
    ConcatCols(Vec<Var>),
    SegmentSum(Var, Arc<Segments>),
    SegmentSoftmax(Var, Arc<Segments>),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Ln(Var),
    Exp(Var),
    Clip(Var, f64, f64),
    MeanAll(Var),
    SumAll(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Const => "const",
            Op::GatherRows(..) => "gather_rows",
            Op::Aggregate(..) => "aggregate",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Affine(..) => "affine",
            Op::Mul(..) => "mul",
            Op::ScaleRows(..) => "scale_rows",
            Op::MatMul(..) => "matmul",
            Op::ConcatCols(..) => "concat_cols",
            Op::SegmentSum(..) => "segment_sum",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Ln(_) => "ln",
            Op::Exp(_) => "exp",
            Op::Clip(..) => "clip",
            Op::MeanAll(_) => "mean_all",
            Op::SumAll(_) => "sum_all",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// A recorded forward computation (the "computation record").
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_non_finite: Option<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    /// Fails with the first primitive that produced a NaN or infinity.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some(i) => Err(Error::numerical(
                format!("{} (node {i})", self.nodes[i].op.name()),
                "non-finite value in forward pass",
            )),
            None => Ok(()),
        }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        if self.first_non_finite.is_none() && !value.is_finite() {
            self.first_non_finite = Some(self.nodes.len());
        }
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn apply(&mut self, op: Op) -> Var {
        let value = {
            let get = |v: Var| &self.nodes[v.0].value;
            eval(&op, &get)
        };
        self.push(op, value)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let value = store.get(id).clone();
        self.push(Op::Param(id), value)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Const, value)
    }

    pub fn gather_rows(&mut self, x: Var, rows: Arc<Vec<usize>>) -> Var {
        self.apply(Op::GatherRows(x, rows))
    }

    pub fn aggregate(&mut self, x: Var, matrix: Arc<SparseMatrix>) -> Var {
        self.apply(Op::Aggregate(x, matrix))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.apply(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.apply(Op::Sub(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        self.apply(Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.apply(Op::Scale(a, s))
    }

    /// `mul * a + add`, elementwise.
    pub fn affine(&mut self, a: Var, mul: f64, add: f64) -> Var {
        self.apply(Op::Affine(a, mul, add))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.apply(Op::Mul(a, b))
    }

    /// Multiplies row `i` of `a` by `col[i]` (`col` is `rows x 1`).
    pub fn scale_rows(&mut self, a: Var, col: Var) -> Var {
        self.apply(Op::ScaleRows(a, col))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.apply(Op::MatMul(a, b))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        self.apply(Op::ConcatCols(parts.to_vec()))
    }

    /// Sums each segment of rows into one output row; empty segments give zeros.
    pub fn segment_sum(&mut self, x: Var, segments: Arc<Segments>) -> Var {
        self.apply(Op::SegmentSum(x, segments))
    }

    /// Softmax of a `n x 1` column within each segment.
    pub fn segment_softmax(&mut self, x: Var, segments: Arc<Segments>) -> Var {
        self.apply(Op::SegmentSoftmax(x, segments))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.apply(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.apply(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.apply(Op::Relu(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.apply(Op::Ln(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.apply(Op::Exp(a))
    }

    pub fn clip(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.apply(Op::Clip(a, lo, hi))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        self.apply(Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        self.apply(Op::SumAll(a))
    }

    /// Re-evaluates every node from current parameter values and the
    /// recorded constants.
    pub fn replay(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Param(id) => store.get(*id).clone(),
                Op::Const => node.value.clone(),
                op => {
                    let get = |v: Var| &values[v.0];
                    eval(op, &get)
                }
            };
            values.push(v);
        }
        values
    }

    /// Gradient of the scalar `loss` with respect to every parameter in
    /// `store`; parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<GradientMap> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(Error::contract(format!(
                "loss node must be scalar, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut out = GradientMap::zeros_like(store);
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(
            loss_value.shape()[0],
            loss_value.shape()[1],
            1.0,
        ));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !g.is_finite() {
                return Err(Error::numerical(
                    format!("{} (node {i})", node.op.name()),
                    "non-finite gradient during backward pass",
                ));
            }
            let val = |v: Var| &self.nodes[v.0].value;
            let mut contribs: Vec<(Var, Tensor)> = Vec::with_capacity(2);
            let mut send = |v: Var, contrib: Tensor| contribs.push((v, contrib));
            match &node.op {
                Op::Param(id) => {
                    let dst = out.get_mut(*id);
                    if !dst.same_shape(&g) {
                        return Err(Error::contract(format!(
                            "parameter {} shape changed since recording",
                            store.name(*id)
                        )));
                    }
                    dst.axpy(1.0, &g);
                }
                Op::Const => {}
                Op::GatherRows(x, rows) => {
                    let src = val(*x);
                    let mut gx = Tensor::zeros(src.shape().to_vec());
                    for (r, &from) in rows.iter().enumerate() {
                        for (o, v) in gx.row_mut(from).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    send(*x, gx);
                }
                Op::Aggregate(x, m) => send(*x, m.mul_dense_transposed(&g)),
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Tensor::zeros(vec![1, g.cols()]);
                    for r in 0..g.rows() {
                        for (o, v) in gr.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    send(*row, gr);
                    send(*a, g);
                }
                Op::Scale(a, s) => send(*a, g.map(|v| v * s)),
                Op::Affine(a, m, _) => send(*a, g.map(|v| v * m)),
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, val(*b), |gv, bv| gv * bv);
                    let gb = zip_map(&g, val(*a), |gv, av| gv * av);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::ScaleRows(a, col) => {
                    let av = val(*a);
                    let cv = val(*col);
                    let mut ga = g.clone();
                    let mut gc = Tensor::zeros(vec![av.rows(), 1]);
                    for r in 0..av.rows() {
                        let c = cv.data()[r];
                        let mut acc = 0.0;
                        for (gv, x) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                            acc += *gv * x;
                            *gv *= c;
                        }
                        gc.data_mut()[r] = acc;
                    }
                    send(*a, ga);
                    send(*col, gc);
                }
                Op::MatMul(a, b) => {
                    let ga = gemm(&g, false, val(*b), true);
                    let gb = gemm(val(*a), true, &g, false);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = val(*p).cols();
                        let mut gp = Tensor::zeros(vec![g.rows(), w]);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[start..start + w]);
                        }
                        start += w;
                        send(*p, gp);
                    }
                }
                Op::SegmentSum(x, seg) => {
                    let src = val(*x);
                    let mut gx = Tensor::zeros(src.shape().to_vec());
                    for s in 0..seg.count() {
                        for r in seg.range(s) {
                            gx.row_mut(r).copy_from_slice(g.row(s));
                        }
                    }
                    send(*x, gx);
                }
                Op::SegmentSoftmax(x, seg) => {
                    let y = &node.value;
                    let mut gx = Tensor::zeros(y.shape().to_vec());
                    for s in 0..seg.count() {
                        let range = seg.range(s);
                        let dot: f64 = range.clone().map(|r| y.data()[r] * g.data()[r]).sum();
                        for r in range {
                            gx.data_mut()[r] = y.data()[r] * (g.data()[r] - dot);
                        }
                    }
                    send(*x, gx);
                }
                Op::Sigmoid(a) => send(*a, zip_map(&g, &node.value, |gv, y| gv * y * (1.0 - y))),
                Op::Tanh(a) => send(*a, zip_map(&g, &node.value, |gv, y| gv * (1.0 - y * y))),
                Op::Relu(a) => send(
                    *a,
                    zip_map(&g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }),
                ),
                Op::Ln(a) => send(*a, zip_map(&g, val(*a), |gv, x| gv / x)),
                Op::Exp(a) => send(*a, zip_map(&g, &node.value, |gv, y| gv * y)),
                Op::Clip(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    send(
                        *a,
                        zip_map(
                            &g,
                            val(*a),
                            |gv, x| {
                                if (lo..=hi).contains(&x) {
                                    gv
                                } else {
                                    0.0
                                }
                            },
                        ),
                    )
                }
                Op::MeanAll(a) => {
                    let src = val(*a);
                    let n = src.len() as f64;
                    let gv = g.item() / n;
                    send(*a, Tensor::new(src.shape().to_vec(), vec![gv; src.len()])?);
                }
                Op::SumAll(a) => {
                    let src = val(*a);
                    let gv = g.item();
                    send(*a, Tensor::new(src.shape().to_vec(), vec![gv; src.len()])?);
                }
            }
            for (v, contrib) in contribs {
                if !contrib.is_finite() {
                    return Err(Error::numerical(
                        format!("{} (node {i})", node.op.name()),
                        "non-finite gradient during backward pass",
                    ));
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.axpy(1.0, &contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(out)
    }
}

/// Runs backward on an already-recorded forward pass.
pub fn forward_backward(tape: &Tape, loss: Var, store: &ParamStore) -> Result<GradientMap> {
    tape.backward(loss, store)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

fn eval<'a>(op: &Op, get: &dyn Fn(Var) -> &'a Tensor) -> Tensor {
    match op {
        Op::Param(_) | Op::Const => unreachable!("leaf nodes carry their own value"),
        Op::GatherRows(x, rows) => {
            let src = get(*x);
            let d = src.cols();
            let mut data = Vec::with_capacity(rows.len() * d);
            for &r in rows.iter() {
                data.extend_from_slice(src.row(r));
            }
            Tensor::matrix(rows.len(), d, data)
        }
        Op::Aggregate(x, m) => m.mul_dense(get(*x)),
        Op::Add(a, b) => zip_map(get(*a), get(*b), |x, y| x + y),
        Op::Sub(a, b) => zip_map(get(*a), get(*b), |x, y| x - y),
        Op::AddRow(a, row) => {
            let (av, rv) = (get(*a), get(*row));
            assert_eq!(rv.shape(), &[1, av.cols()], "add_row shape mismatch");
            let mut out = av.clone();
            for r in 0..out.rows() {
                for (o, b) in out.row_mut(r).iter_mut().zip(rv.data()) {
                    *o += b;
                }
            }
            out
        }
        Op::Scale(a, s) => get(*a).map(|v| v * s),
        Op::Affine(a, m, c) => get(*a).map(|v| m * v + c),
        Op::Mul(a, b) => zip_map(get(*a), get(*b), |x, y| x * y),
        Op::ScaleRows(a, col) => {
            let (av, cv) = (get(*a), get(*col));
            assert_eq!(cv.shape(), &[av.rows(), 1], "scale_rows shape mismatch");
            let mut out = av.clone();
            for r in 0..out.rows() {
                let c = cv.data()[r];
                for o in out.row_mut(r) {
                    *o *= c;
                }
            }
            out
        }
        Op::MatMul(a, b) => gemm(get(*a), false, get(*b), false),
        Op::ConcatCols(parts) => {
            let vals: Vec<&Tensor> = parts.iter().map(|p| get(*p)).collect();
            let rows = vals[0].rows();
            assert!(vals.iter().all(|v| v.rows() == rows), "concat row mismatch");
            let width: usize = vals.iter().map(|v| v.cols()).sum();
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                for v in &vals {
                    data.extend_from_slice(v.row(r));
                }
            }
            Tensor::matrix(rows, width, data)
        }
        Op::SegmentSum(x, seg) => {
            let src = get(*x);
            assert_eq!(src.rows(), seg.total(), "segment_sum row mismatch");
            let mut out = Tensor::zeros(vec![seg.count(), src.cols()]);
            for s in 0..seg.count() {
                for r in seg.range(s) {
                    for (o, v) in out.row_mut(s).iter_mut().zip(src.row(r)) {
                        *o += v;
                    }
                }
            }
            out
        }
        Op::SegmentSoftmax(x, seg) => {
            let src = get(*x);
            assert_eq!(src.shape(), &[seg.total(), 1], "segment_softmax shape");
            let mut out = Tensor::zeros(vec![seg.total(), 1]);
            for s in 0..seg.count() {
                let range = seg.range(s);
                if range.is_empty() {
                    continue;
                }
                let max = range
                    .clone()
                    .map(|r| src.data()[r])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for r in range.clone() {
                    let e = (src.data()[r] - max).exp();
                    out.data_mut()[r] = e;
                    z += e;
                }
                for r in range {
                    out.data_mut()[r] /= z;
                }
            }
            out
        }
        Op::Sigmoid(a) => get(*a).map(sigmoid),
        Op::Tanh(a) => get(*a).map(f64::tanh),
        Op::Relu(a) => get(*a).map(|v| v.max(0.0)),
        Op::Ln(a) => get(*a).map(f64::ln),
        Op::Exp(a) => get(*a).map(f64::exp),
        Op::Clip(a, lo, hi) => get(*a).map(|v| v.clamp(*lo, *hi)),
        Op::MeanAll(a) => {
            let v = get(*a);
            Tensor::scalar(v.data().iter().sum::<f64>() / v.len() as f64)
        }
        Op::SumAll(a) => Tensor::scalar(get(*a).data().iter().sum()),
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
