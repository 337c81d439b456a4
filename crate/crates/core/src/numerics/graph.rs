//! Define-by-run reverse-mode autodiff.
//!
//! A [`Graph`] is an append-only tape: node ids are topologically ordered by
//! construction. [`Graph::backward`] expresses every vector-Jacobian product as
//! new nodes on the same tape, so gradients can themselves be differentiated
//! (needed for the gradient penalty). Third derivatives of Mish are not
//! provided.

use std::collections::HashMap;
use std::rc::Rc;

use super::tensor::{mish, mish_d1, mish_d2, sigmoid, Tensor};
use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Min(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    MulConst(NodeId, Rc<Tensor>),
    MulRows(NodeId, Rc<Tensor>),
    SumRows(NodeId),
    BroadcastRows(NodeId),
    SumCols(NodeId),
    BroadcastCols(NodeId),
    SumAll(NodeId),
    Fill(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Recip(NodeId),
    Sqrt(NodeId),
    Square(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Mish(NodeId),
    MishD1(NodeId),
    MishD2(NodeId),
    Clamp(NodeId, f64, f64),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize),
    PadCols(NodeId, usize),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Leaf => Vec::new(),
            MatMul { a, b, .. } => vec![*a, *b],
            AddBias(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Min(a, b) => vec![*a, *b],
            Scale(x, _)
            | AddScalar(x)
            | MulConst(x, _)
            | MulRows(x, _)
            | SumRows(x)
            | BroadcastRows(x)
            | SumCols(x)
            | BroadcastCols(x)
            | SumAll(x)
            | Fill(x)
            | Exp(x)
            | Log(x)
            | Recip(x)
            | Sqrt(x)
            | Square(x)
            | Tanh(x)
            | Sigmoid(x)
            | Relu(x)
            | Mish(x)
            | MishD1(x)
            | MishD2(x)
            | Clamp(x, _, _)
            | SliceCols(x, _)
            | PadCols(x, _) => vec![*x],
            Concat(parts) => parts.clone(),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of one scalar loss with respect to the requested nodes.
#[derive(Debug, Clone)]
pub struct Gradients {
    map: HashMap<NodeId, NodeId>,
}

impl Gradients {
    /// Node holding `∂loss/∂wrt`.
    pub fn node(&self, wrt: NodeId) -> Option<NodeId> {
        self.map.get(&wrt).copied()
    }

    pub fn tensor<'g>(&self, graph: &'g Graph, wrt: NodeId) -> Option<&'g Tensor> {
        self.node(wrt).map(|n| graph.value(n))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Inputs, parameters and constants all enter the tape as leaves.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> NodeId {
        let v = Tensor::matmul(self.value(a), self.value(b), ta, tb);
        self.push(Op::MatMul { a, b, ta, tb }, v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.matmul_t(a, b, false, false)
    }

    /// `x + b` with the `[1, c]` row `b` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let (xv, bv) = (self.value(x), self.value(b));
        assert!(bv.rows() == 1 && bv.cols() == xv.cols(), "bias shape");
        let c = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(Op::AddBias(x, b), out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).zip_map(self.value(b), f64::min);
        self.push(Op::Min(a, b), v)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|e| e * c);
        self.push(Op::Scale(x, c), v)
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|e| e + c);
        self.push(Op::AddScalar(x), v)
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: NodeId, m: Rc<Tensor>) -> NodeId {
        let v = self.value(x).zip_map(&m, |a, b| a * b);
        self.push(Op::MulConst(x, m), v)
    }

    /// Scales row `i` of `x` by the constant `col[i]` (`col` is `[rows, 1]`).
    pub fn mul_rows(&mut self, x: NodeId, col: Rc<Tensor>) -> NodeId {
        let xv = self.value(x);
        assert!(col.cols() == 1 && col.rows() == xv.rows(), "row scale shape");
        let c = xv.cols();
        let mut out = xv.clone();
        for (i, o) in out.data_mut().iter_mut().enumerate() {
            *o *= col.data()[i / c];
        }
        self.push(Op::MulRows(x, col), out)
    }

    /// `[r, c] → [1, c]`.
    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let c = xv.cols();
        let mut out = vec![0.0; c];
        for row in xv.data().chunks_exact(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        self.push(Op::SumRows(x), Tensor::row(out))
    }

    /// `[1, c] → [r, c]`.
    pub fn broadcast_rows(&mut self, x: NodeId, r: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.rows(), 1);
        let mut out = Vec::with_capacity(r * xv.cols());
        for _ in 0..r {
            out.extend_from_slice(xv.data());
        }
        let v = Tensor::from_vec(r, xv.cols(), out);
        self.push(Op::BroadcastRows(x), v)
    }

    /// `[r, c] → [r, 1]`.
    pub fn sum_cols(&mut self, x: NodeId) -> NodeId {
        let xv = self.value(x);
        let out: Vec<f64> = (0..xv.rows()).map(|r| xv.row_slice(r).iter().sum()).collect();
        self.push(Op::SumCols(x), Tensor::column(out))
    }

    /// `[r, 1] → [r, c]`.
    pub fn broadcast_cols(&mut self, x: NodeId, c: usize) -> NodeId {
        let xv = self.value(x);
        assert_eq!(xv.cols(), 1);
        let mut out = Vec::with_capacity(xv.rows() * c);
        for &v in xv.data() {
            out.extend(std::iter::repeat_n(v, c));
        }
        let v = Tensor::from_vec(xv.rows(), c, out);
        self.push(Op::BroadcastCols(x), v)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(Op::SumAll(x), v)
    }

    pub fn mean_all(&mut self, x: NodeId) -> NodeId {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    /// Broadcasts a `[1, 1]` node to `shape`.
    pub fn fill(&mut self, x: NodeId, shape: [usize; 2]) -> NodeId {
        let v = Tensor::full(shape[0], shape[1], self.value(x).item());
        self.push(Op::Fill(x), v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::exp);
        self.push(Op::Exp(x), v)
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::ln);
        self.push(Op::Log(x), v)
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::recip);
        self.push(Op::Recip(x), v)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::sqrt);
        self.push(Op::Sqrt(x), v)
    }

    pub fn square(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|e| e * e);
        self.push(Op::Square(x), v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), v)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|e| e.max(0.0));
        self.push(Op::Relu(x), v)
    }

    pub fn mish(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(mish);
        self.push(Op::Mish(x), v)
    }

    fn mish_d1(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(mish_d1);
        self.push(Op::MishD1(x), v)
    }

    fn mish_d2(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(mish_d2);
        self.push(Op::MishD2(x), v)
    }

    /// Clamps values to `[lo, hi]`; the gradient is zero outside the range.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> NodeId {
        let v = self.value(x).map(|e| e.clamp(lo, hi));
        self.push(Op::Clamp(x, lo, hi), v)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::concat_cols(&vals);
        self.push(Op::Concat(parts.to_vec()), v)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(x).slice_cols(start, end);
        self.push(Op::SliceCols(x, start), v)
    }

    /// Places `x` at column offset `start` inside a zero matrix `total` wide.
    fn pad_cols(&mut self, x: NodeId, start: usize, total: usize) -> NodeId {
        let xv = self.value(x);
        let (r, w) = (xv.rows(), xv.cols());
        let mut out = Tensor::zeros(r, total);
        for i in 0..r {
            for j in 0..w {
                out.set(i, start + j, xv.get(i, j));
            }
        }
        self.push(Op::PadCols(x, start), out)
    }

    /// Reverse sweep from the scalar `loss`, returning gradients for each node
    /// in `wrt`. Only nodes on a path from some `wrt` entry to `loss` receive
    /// gradients; entries that do not influence `loss` get zeros.
    pub fn backward(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Gradients, NumericsError> {
        let shape = self.value(loss).shape();
        if shape != [1, 1] {
            return Err(NumericsError::NonScalarLoss(shape));
        }
        let end = loss.0 + 1;
        let mut reach = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                reach[w.0] = true;
            }
        }
        for i in 0..end {
            if !reach[i] && self.nodes[i].op.inputs().iter().any(|j| reach[j.0]) {
                reach[i] = true;
            }
        }

        let mut grads: Vec<Option<NodeId>> = vec![None; end];
        if reach[loss.0] {
            grads[loss.0] = Some(self.leaf(Tensor::scalar(1.0)));
        }
        for i in (0..end).rev() {
            let Some(g) = grads[i] else { continue };
            if !reach[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            for (slot, input) in op.inputs().into_iter().enumerate() {
                if !reach[input.0] {
                    continue;
                }
                let contrib = self.vjp(NodeId(i), &op, slot, g)?;
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, contrib),
                    None => contrib,
                });
            }
        }

        let mut map = HashMap::with_capacity(wrt.len());
        for &w in wrt {
            let g = match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let [r, c] = self.value(w).shape();
                    self.leaf(Tensor::zeros(r, c))
                }
            };
            map.insert(w, g);
        }
        Ok(Gradients { map })
    }

    /// Contribution of upstream gradient `g` at node `out` to its `slot`-th input.
    fn vjp(&mut self, out: NodeId, op: &Op, slot: usize, g: NodeId) -> Result<NodeId, NumericsError> {
        use Op::*;
        Ok(match op {
            Leaf => unreachable!("leaves have no inputs"),
            MatMul { a, b, ta, tb } => {
                let (a, b, ta, tb) = (*a, *b, *ta, *tb);
                match (slot, ta, tb) {
                    (0, false, _) => self.matmul_t(g, b, false, !tb),
                    (0, true, _) => self.matmul_t(b, g, tb, true),
                    (_, _, false) => self.matmul_t(a, g, !ta, false),
                    (_, _, true) => self.matmul_t(g, a, true, ta),
                }
            }
            AddBias(..) => {
                if slot == 0 {
                    g
                } else {
                    self.sum_rows(g)
                }
            }
            Add(..) => g,
            Sub(..) => {
                if slot == 0 {
                    g
                } else {
                    self.neg(g)
                }
            }
            Mul(a, b) => {
                let other = if slot == 0 { *b } else { *a };
                self.mul(g, other)
            }
            Min(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mask = if slot == 0 {
                    av.zip_map(bv, |x, y| if x <= y { 1.0 } else { 0.0 })
                } else {
                    av.zip_map(bv, |x, y| if x <= y { 0.0 } else { 1.0 })
                };
                self.mul_const(g, Rc::new(mask))
            }
            Scale(_, c) => self.scale(g, *c),
            AddScalar(..) => g,
            MulConst(_, m) => self.mul_const(g, m.clone()),
            MulRows(_, col) => self.mul_rows(g, col.clone()),
            SumRows(x) => {
                let r = self.value(*x).rows();
                self.broadcast_rows(g, r)
            }
            BroadcastRows(..) => self.sum_rows(g),
            SumCols(x) => {
                let c = self.value(*x).cols();
                self.broadcast_cols(g, c)
            }
            BroadcastCols(..) => self.sum_cols(g),
            SumAll(x) => {
                let s = self.value(*x).shape();
                self.fill(g, s)
            }
            Fill(..) => self.sum_all(g),
            Exp(_) => self.mul(g, out),
            Log(x) => {
                let r = self.recip(*x);
                self.mul(g, r)
            }
            Recip(_) => {
                let sq = self.square(out);
                let neg = self.neg(sq);
                self.mul(g, neg)
            }
            Sqrt(_) => {
                let r = self.recip(out);
                let half = self.scale(r, 0.5);
                self.mul(g, half)
            }
            Square(x) => {
                let two = self.scale(*x, 2.0);
                self.mul(g, two)
            }
            Tanh(_) => {
                let sq = self.square(out);
                let neg = self.neg(sq);
                let d = self.add_scalar(neg, 1.0);
                self.mul(g, d)
            }
            Sigmoid(_) => {
                let neg = self.neg(out);
                let one_minus = self.add_scalar(neg, 1.0);
                let d = self.mul(out, one_minus);
                self.mul(g, d)
            }
            Relu(x) => {
                let mask = self.value(*x).map(|e| if e > 0.0 { 1.0 } else { 0.0 });
                self.mul_const(g, Rc::new(mask))
            }
            Mish(x) => {
                let d = self.mish_d1(*x);
                self.mul(g, d)
            }
            MishD1(x) => {
                let d = self.mish_d2(*x);
                self.mul(g, d)
            }
            MishD2(_) => return Err(NumericsError::Unsupported("third derivative of mish")),
            Clamp(x, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                let mask = self
                    .value(*x)
                    .map(|e| if e >= lo && e <= hi { 1.0 } else { 0.0 });
                self.mul_const(g, Rc::new(mask))
            }
            Concat(parts) => {
                let mut off = 0;
                for p in &parts[..slot] {
                    off += self.value(*p).cols();
                }
                let w = self.value(parts[slot]).cols();
                self.slice_cols(g, off, off + w)
            }
            SliceCols(x, start) => {
                let total = self.value(*x).cols();
                self.pad_cols(g, *start, total)
            }
            PadCols(x, start) => {
                let w = self.value(*x).cols();
                self.slice_cols(g, *start, *start + w)
            }
        })
    }
}
