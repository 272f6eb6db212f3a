//! Tape-based reverse-mode differentiation.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]; the node keeps
//! its forward value and enough context to push adjoints back to its inputs.
//! [`Tape::backward`] walks the tape once in reverse.

use std::cell::RefCell;
use std::sync::Arc;

use rand::Rng;

use super::dense::Tensor;
use crate::error::{DftError, Result};

/// Arguments of `log` are clamped to at least this value.
pub const LOG_CLAMP: f64 = 1e-12;

/// Variance floor used by batch normalisation.
pub const BN_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// `1×c` operand repeated over rows.
    Row,
    /// `r×1` operand repeated over columns.
    Col,
    Scalar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize, Bcast),
    Sub(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    Scale(usize, f64),
    Relu(usize),
    Softmax(usize),
    Log(usize),
    Exp(usize),
    Trace(usize),
    SqFrobenius(usize),
    Sum(usize),
    ColSum(usize),
    RowSum(usize),
    BatchNorm { input: usize, inv_std: Vec<f64> },
    RowNorm(usize),
    ConcatCols(usize, usize),
    SliceCols { input: usize, start: usize },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// A recording of differentiable computation. Confined to one thread.
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
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Batch statistics observed by a training-mode batch normalisation.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance per feature.
    pub var: Vec<f64>,
    pub count: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A tracked leaf: gradients are accumulated for it.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// An untracked input; gradients stop here.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn constant_shared(&self, value: Arc<Tensor>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn value_of(&self, id: usize) -> Arc<Tensor> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Propagates adjoints from a `1×1` tracked `loss` to every tracked leaf.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(DftError::contract("backward: loss recorded on another tape"));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(DftError::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(DftError::contract("backward: loss is not tracked"));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            backprop_node(&nodes, node, &g, &mut grads);
        }

        let mut out: Vec<Option<Tensor>> = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.iter().enumerate() {
            let g = if matches!(node.op, Op::Leaf) && node.requires_grad {
                Some(
                    grads
                        .get_mut(id)
                        .and_then(Option::take)
                        .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols())),
                )
            } else {
                None
            };
            out.push(g);
        }
        Ok(Gradients { grads: out })
    }
}

/// Gradients of a scalar with respect to the tracked leaves of a tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a tracked leaf; `None` for constants and intermediates.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.grads.get_mut(var.id).and_then(Option::take)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, delta: Tensor) {
    match &mut grads[id] {
        Some(g) => g.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

/// Sums an adjoint of the full shape down to the shape of a broadcast operand.
fn reduce_broadcast(g: &Tensor, kind: Bcast) -> Tensor {
    match kind {
        Bcast::Same => g.clone(),
        Bcast::Row => col_sum(g),
        Bcast::Col => row_sum(g),
        Bcast::Scalar => Tensor::scalar(g.sum()),
    }
}

fn col_sum(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(t.row(r)) {
            *o += v;
        }
    }
    out
}

fn row_sum(t: &Tensor) -> Tensor {
    Tensor::column((0..t.rows()).map(|r| t.row(r).iter().sum()).collect())
}

/// Expands `b` to the shape of `a` under the given broadcast kind.
fn expand(b: &Tensor, kind: Bcast, rows: usize, cols: usize) -> Tensor {
    match kind {
        Bcast::Same => b.clone(),
        Bcast::Row => {
            let mut out = Tensor::zeros(rows, cols);
            for r in 0..rows {
                out.row_mut(r).copy_from_slice(b.row(0));
            }
            out
        }
        Bcast::Col => {
            let mut out = Tensor::zeros(rows, cols);
            for r in 0..rows {
                let v = b.get(r, 0);
                out.row_mut(r).fill(v);
            }
            out
        }
        Bcast::Scalar => Tensor::full(rows, cols, b.item()),
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let wants = |id: usize| nodes[id].requires_grad;
    match node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            if wants(a) {
                accumulate(grads, a, g.matmul_t(val(b)).expect("matmul adjoint"));
            }
            if wants(b) {
                accumulate(grads, b, val(a).t_matmul(g).expect("matmul adjoint"));
            }
        }
        Op::Transpose(a) => {
            if wants(a) {
                accumulate(grads, a, g.transpose());
            }
        }
        Op::Add(a, b, kind) => {
            if wants(a) {
                accumulate(grads, a, g.clone());
            }
            if wants(b) {
                accumulate(grads, b, reduce_broadcast(g, kind));
            }
        }
        Op::Sub(a, b, kind) => {
            if wants(a) {
                accumulate(grads, a, g.clone());
            }
            if wants(b) {
                accumulate(grads, b, reduce_broadcast(&g.scale(-1.0), kind));
            }
        }
        Op::Mul(a, b, kind) => {
            let (av, bv) = (val(a), val(b));
            if wants(a) {
                let be = expand(bv, kind, av.rows(), av.cols());
                accumulate(grads, a, g.zip_map(&be, |x, y| x * y));
            }
            if wants(b) {
                let full = g.zip_map(av, |x, y| x * y);
                accumulate(grads, b, reduce_broadcast(&full, kind));
            }
        }
        Op::Scale(a, s) => {
            if wants(a) {
                accumulate(grads, a, g.scale(s));
            }
        }
        Op::Relu(a) => {
            if wants(a) {
                let d = g.zip_map(val(a), |gi, x| if x > 0.0 { gi } else { 0.0 });
                accumulate(grads, a, d);
            }
        }
        Op::Softmax(a) => {
            if wants(a) {
                let y = &node.value;
                let mut d = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in d.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                accumulate(grads, a, d);
            }
        }
        Op::Log(a) => {
            if wants(a) {
                let d = g.zip_map(val(a), |gi, x| if x > LOG_CLAMP { gi / x } else { 0.0 });
                accumulate(grads, a, d);
            }
        }
        Op::Exp(a) => {
            if wants(a) {
                accumulate(grads, a, g.zip_map(&node.value, |gi, y| gi * y));
            }
        }
        Op::Trace(a) => {
            if wants(a) {
                let av = val(a);
                let mut d = Tensor::zeros(av.rows(), av.cols());
                for i in 0..av.rows().min(av.cols()) {
                    d.set(i, i, g.item());
                }
                accumulate(grads, a, d);
            }
        }
        Op::SqFrobenius(a) => {
            if wants(a) {
                accumulate(grads, a, val(a).scale(2.0 * g.item()));
            }
        }
        Op::Sum(a) => {
            if wants(a) {
                let av = val(a);
                accumulate(grads, a, Tensor::full(av.rows(), av.cols(), g.item()));
            }
        }
        Op::ColSum(a) => {
            if wants(a) {
                let av = val(a);
                accumulate(grads, a, expand(g, Bcast::Row, av.rows(), av.cols()));
            }
        }
        Op::RowSum(a) => {
            if wants(a) {
                let av = val(a);
                accumulate(grads, a, expand(g, Bcast::Col, av.rows(), av.cols()));
            }
        }
        Op::BatchNorm { input, ref inv_std } => {
            if wants(input) {
                let xhat = &node.value;
                let n = xhat.rows() as f64;
                let sum_g = col_sum(g);
                let sum_gx = col_sum(&g.zip_map(xhat, |a, b| a * b));
                let mut d = Tensor::zeros(xhat.rows(), xhat.cols());
                for r in 0..xhat.rows() {
                    for c in 0..xhat.cols() {
                        let v = inv_std[c] / n
                            * (n * g.get(r, c)
                                - sum_g.get(0, c)
                                - xhat.get(r, c) * sum_gx.get(0, c));
                        d.set(r, c, v);
                    }
                }
                accumulate(grads, input, d);
            }
        }
        Op::RowNorm(a) => {
            if wants(a) {
                let (av, norms) = (val(a), &node.value);
                let mut d = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let nr = norms.get(r, 0);
                    if nr > 0.0 {
                        let coef = g.get(r, 0) / nr;
                        for (o, x) in d.row_mut(r).iter_mut().zip(av.row(r)) {
                            *o = coef * x;
                        }
                    }
                }
                accumulate(grads, a, d);
            }
        }
        Op::ConcatCols(a, b) => {
            let ca = val(a).cols();
            if wants(a) {
                accumulate(grads, a, slice_cols(g, 0, ca));
            }
            if wants(b) {
                accumulate(grads, b, slice_cols(g, ca, g.cols() - ca));
            }
        }
        Op::SliceCols { input, start } => {
            if wants(input) {
                let iv = val(input);
                let mut d = Tensor::zeros(iv.rows(), iv.cols());
                for r in 0..iv.rows() {
                    d.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, input, d);
            }
        }
    }
}

fn slice_cols(t: &Tensor, start: usize, len: usize) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), len);
    for r in 0..t.rows() {
        out.row_mut(r).copy_from_slice(&t.row(r)[start..start + len]);
    }
    out
}

fn bcast_kind(a: [usize; 2], b: [usize; 2]) -> Option<Bcast> {
    if a == b {
        Some(Bcast::Same)
    } else if b == [1, 1] {
        Some(Bcast::Scalar)
    } else if b[0] == 1 && b[1] == a[1] {
        Some(Bcast::Row)
    } else if b[1] == 1 && b[0] == a[0] {
        Some(Bcast::Col)
    } else {
        None
    }
}

/// Row-wise softmax. Entries where `mask` is zero are excluded from the
/// normalisation and come out as exactly zero; a fully masked row is all
/// zeros.
pub fn masked_softmax(x: &Tensor, mask: Option<&Tensor>) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let keep = |c: usize| mask.is_none_or(|m| m.get(r, c) != 0.0);
        let row = x.row(r);
        let max = (0..x.cols())
            .filter(|&c| keep(c))
            .map(|c| row[c])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let o = out.row_mut(r);
        let mut total = 0.0;
        for c in 0..row.len() {
            if keep(c) {
                o[c] = (row[c] - max).exp();
                total += o[c];
            }
        }
        for v in o.iter_mut() {
            *v /= total;
        }
    }
    out
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    /// Same value, cut from the tape's history.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant_shared(self.value())
    }

    fn check_same_tape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(DftError::contract(format!("{op}: operands on different tapes")))
        }
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        self.tape.push(value, op, self.is_tracked())
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let tracked = self.is_tracked() || other.is_tracked();
        self.tape.push(value, op, tracked)
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&other, "matmul")?;
        let v = self.value().matmul(&other.value())?;
        Ok(self.binary(&other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn t(&self) -> Var<'t> {
        self.unary(self.value().transpose(), Op::Transpose(self.id))
    }

    fn broadcast_binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize, Bcast) -> Op,
    ) -> Result<Var<'t>> {
        self.check_same_tape(&other, name)?;
        let (a, b) = (self.value(), other.value());
        let kind = bcast_kind(a.shape(), b.shape()).ok_or(DftError::Shape {
            op: name,
            lhs: a.shape(),
            rhs: b.shape(),
        })?;
        let v = a.zip_map(&expand(&b, kind, a.rows(), a.cols()), f);
        Ok(self.binary(&other, v, make(self.id, other.id, kind)))
    }

    /// Elementwise sum; `other` may be `1×c`, `r×1` or `1×1` and is broadcast.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast_binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast_binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    /// Hadamard product with the same broadcasting rules as [`Var::add`].
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast_binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(self.value().scale(s), Op::Scale(self.id, s))
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        let c = self.tape.scalar(s);
        self.add(c).expect("scalar broadcast always applies")
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self).expect("same shape")
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(self.value().map(|x| x.max(0.0)), Op::Relu(self.id))
    }

    pub fn softmax(&self) -> Var<'t> {
        self.unary(masked_softmax(&self.value(), None), Op::Softmax(self.id))
    }

    /// Row softmax restricted to the nonzero entries of `mask`.
    pub fn masked_softmax(&self, mask: &Tensor) -> Result<Var<'t>> {
        let x = self.value();
        if x.shape() != mask.shape() {
            return Err(DftError::Shape {
                op: "masked_softmax",
                lhs: x.shape(),
                rhs: mask.shape(),
            });
        }
        Ok(self.unary(masked_softmax(&x, Some(mask)), Op::Softmax(self.id)))
    }

    /// Natural log with the argument clamped to at least [`LOG_CLAMP`].
    pub fn ln(&self) -> Var<'t> {
        self.unary(self.value().map(|x| x.max(LOG_CLAMP).ln()), Op::Log(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(self.value().map(f64::exp), Op::Exp(self.id))
    }

    pub fn trace(&self) -> Var<'t> {
        self.unary(Tensor::scalar(self.value().trace()), Op::Trace(self.id))
    }

    pub fn sq_frobenius(&self) -> Var<'t> {
        self.unary(Tensor::scalar(self.value().sq_norm()), Op::SqFrobenius(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        self.unary(Tensor::scalar(self.value().sum()), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.value().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over rows: `r×c → 1×c`.
    pub fn col_sum(&self) -> Var<'t> {
        self.unary(col_sum(&self.value()), Op::ColSum(self.id))
    }

    /// Sum over columns: `r×c → r×1`.
    pub fn row_sum(&self) -> Var<'t> {
        self.unary(row_sum(&self.value()), Op::RowSum(self.id))
    }

    pub fn col_mean(&self) -> Var<'t> {
        let n = self.shape()[0].max(1) as f64;
        self.col_sum().scale(1.0 / n)
    }

    pub fn row_mean(&self) -> Var<'t> {
        let n = self.shape()[1].max(1) as f64;
        self.row_sum().scale(1.0 / n)
    }

    /// Euclidean norm of each row: `r×c → r×1`.
    pub fn row_norm(&self) -> Var<'t> {
        let x = self.value();
        let norms = (0..x.rows())
            .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        self.unary(Tensor::column(norms), Op::RowNorm(self.id))
    }

    pub fn concat_cols(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.check_same_tape(&other, "concat_cols")?;
        let (a, b) = (self.value(), other.value());
        if a.rows() != b.rows() {
            return Err(DftError::Shape {
                op: "concat_cols",
                lhs: a.shape(),
                rhs: b.shape(),
            });
        }
        let mut out = Tensor::zeros(a.rows(), a.cols() + b.cols());
        for r in 0..a.rows() {
            let o = out.row_mut(r);
            o[..a.cols()].copy_from_slice(a.row(r));
            o[a.cols()..].copy_from_slice(b.row(r));
        }
        Ok(self.binary(&other, out, Op::ConcatCols(self.id, other.id)))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        if start + len > x.cols() {
            return Err(DftError::Shape {
                op: "slice_cols",
                lhs: x.shape(),
                rhs: [start, len],
            });
        }
        Ok(self.unary(
            slice_cols(&x, start, len),
            Op::SliceCols {
                input: self.id,
                start,
            },
        ))
    }

    /// Per-feature standardisation over the rows using batch statistics.
    /// Returns the normalised values and the statistics that produced them.
    pub fn batch_norm(&self) -> (Var<'t>, BatchStats) {
        let x = self.value();
        let (n, d) = (x.rows(), x.cols());
        let nf = n.max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                let dv = x.get(r, c) - mean[c];
                var[c] += dv * dv;
            }
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut out = Tensor::zeros(n, d);
        for r in 0..n {
            for c in 0..d {
                out.set(r, c, (x.get(r, c) - mean[c]) * inv_std[c]);
            }
        }
        let stats = BatchStats {
            mean,
            var,
            count: n,
        };
        let v = self.unary(
            out,
            Op::BatchNorm {
                input: self.id,
                inv_std,
            },
        );
        (v, stats)
    }

    /// Inverted dropout. Identity unless `train` and `rate > 0`.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, train: bool, rng: &mut R) -> Var<'t> {
        if !train || rate <= 0.0 {
            return *self;
        }
        let [r, c] = self.shape();
        let keep = 1.0 - rate;
        let mask = Tensor::from_vec(
            r,
            c,
            (0..r * c)
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect(),
        )
        .expect("mask shape");
        let m = self.tape.constant(mask);
        self.mul(m).expect("same shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_row_softmax_is_uniform() {
        let x = Tensor::full(1, 4, 3.7);
        let y = masked_softmax(&x, None);
        for &v in y.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_entries_are_exactly_zero() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 4.0]]).unwrap();
        let m = Tensor::from_rows(&[vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let y = masked_softmax(&x, Some(&m));
        assert_eq!(y.get(0, 1), 0.0);
        assert_eq!(y.get(1, 0), 0.0);
        assert_eq!(y.get(1, 2), 0.0);
        assert!((y.get(1, 1) - 1.0).abs() < 1e-15);
        assert!((y.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trace_gradient_is_identity() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::random_normal(3, 3, &mut ChaCha8Rng::seed_from_u64(1)));
        let loss = w.trace();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap(), &Tensor::identity(3));
    }

    #[test]
    fn half_frobenius_gradient_is_input() {
        let tape = Tape::new();
        let value = Tensor::random_normal(3, 2, &mut ChaCha8Rng::seed_from_u64(2));
        let w = tape.leaf(value.clone());
        let loss = w.sq_frobenius().scale(0.5);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(w).unwrap().max_abs_diff(&value) < 1e-15);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::zeros(2, 2));
        let err = tape.backward(w.relu());
        assert!(matches!(err, Err(DftError::Contract(_))));
    }

    #[test]
    fn backward_rejects_untracked_loss() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(tape.backward(c.scale(2.0)).is_err());
    }

    #[test]
    fn unreached_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::full(2, 2, 1.0));
        let b = tape.leaf(Tensor::full(1, 3, 1.0));
        let grads = tape.backward(a.sum()).unwrap();
        assert_eq!(grads.get(b).unwrap(), &Tensor::zeros(1, 3));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::full(2, 2, 1.0));
        let c = tape.constant(Tensor::full(2, 2, 3.0));
        let grads = tape.backward(a.mul(c).unwrap().sum()).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(a).unwrap(), &Tensor::full(2, 2, 3.0));
    }

    #[test]
    fn broadcast_shape_mismatch_is_reported() {
        let tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(3, 2));
        let b = tape.leaf(Tensor::zeros(2, 3));
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[3, 2]") && err.contains("[2, 3]"));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(4, 4, 2.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = x.dropout(0.5, false, &mut rng);
        assert_eq!(*y.value(), *x.value());
    }

    #[test]
    fn log_clamps_nonpositive_arguments() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_rows(&[vec![0.0, -1.0, 1.0]]).unwrap());
        let y = x.ln();
        assert_eq!(y.value().get(0, 0), LOG_CLAMP.ln());
        assert!(y.value().is_finite());
        let grads = tape.backward(y.sum()).unwrap();
        assert_eq!(grads.get(x).unwrap().row(0), &[0.0, 0.0, 1.0]);
    }
}
