//! Recorded computation graph with reverse-mode gradients.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward
//! pass. Every operation appends a node; [`Graph::backward`] walks the
//! nodes in reverse and returns gradients for the non-frozen parameters
//! that the loss depends on. Frozen parameters never get an entry and the
//! subgraph that only feeds frozen parameters is skipped entirely.

use super::matrix::{axpy, dot, Matrix};
use super::params::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    /// `x . w^T + b`
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    SliceCols { x: Var, start: usize },
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    Sum(Var),
    LogSoftmax(Var),
}

#[derive(Debug)]
struct Node {
    /// `None` for parameter nodes, whose value lives in the store.
    value: Option<Matrix>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::with_capacity(64),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("non-parameter node without a value"),
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; gradients do not flow into it.
    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn input_row(&mut self, values: &[f64]) -> Var {
        self.input(Matrix::row_vector(values))
    }

    /// The node for a stored parameter. Repeated calls return the same node,
    /// so gradients from every use accumulate.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            requires_grad: !self.store.is_frozen(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.index()] = Some(v);
        v
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.cols() {
            return Err(Error::DimensionMismatch {
                context: "linear input",
                expected: wv.cols(),
                got: xv.cols(),
            });
        }
        let (batch, out) = (xv.rows(), wv.rows());
        let mut y = Matrix::zeros(batch, out);
        for r in 0..batch {
            let xr = xv.row(r);
            let yr = y.row_mut(r);
            for (o, yo) in yr.iter_mut().enumerate() {
                *yo = dot(wv.row(o), xr);
            }
        }
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != (1, out) {
                return Err(Error::DimensionMismatch {
                    context: "linear bias",
                    expected: out,
                    got: bv.len(),
                });
            }
            for r in 0..batch {
                for (yo, bo) in y.row_mut(r).iter_mut().zip(bv.data()) {
                    *yo += bo;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(y, Op::Linear { x, w, b }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, context: &'static str) -> Result<()> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::DimensionMismatch {
                context,
                expected: av.len(),
                got: bv.len(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let y = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let y = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(y, Op::Scale(a, factor), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let y = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(y, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(y, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let y = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(y, Op::Exp(a), rg)
    }

    /// Elementwise clamp; the gradient is zero where the input lies outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let y = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(y, Op::Clamp { x: a, lo, hi }, rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::DimensionMismatch {
                context: "slice_cols",
                expected: av.cols(),
                got: start + len,
            });
        }
        let mut y = Matrix::zeros(av.rows(), len);
        for r in 0..av.rows() {
            y.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(y, Op::SliceCols { x: a, start }, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::DimensionMismatch {
                context: "concat_cols",
                expected: av.rows(),
                got: bv.rows(),
            });
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let mut y = Matrix::zeros(av.rows(), ca + cb);
        for r in 0..av.rows() {
            let row = y.row_mut(r);
            row[..ca].copy_from_slice(av.row(r));
            row[ca..].copy_from_slice(bv.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::ConcatCols(a, b), rg))
    }

    /// Stacks nodes of equal width vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::LengthMismatch("concat_rows of no nodes".into()));
        };
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rg = false;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(Error::DimensionMismatch {
                    context: "concat_rows",
                    expected: cols,
                    got: pv.cols(),
                });
            }
            data.extend_from_slice(pv.data());
            rg |= self.rg(p);
        }
        let y = Matrix::from_vec(data.len() / cols, cols, data);
        Ok(self.push(y, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Sum of all elements, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let y = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(y, Op::Sum(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("shapes agree with themselves")
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut y = av.clone();
        for r in 0..av.rows() {
            let row = y.row_mut(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(y, Op::LogSoftmax(a), rg)
    }

    /// Reverse pass from a scalar loss node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::DimensionMismatch {
                context: "backward loss",
                expected: 1,
                got: lv.len(),
            });
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFiniteLoss(lv.item()));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        let mut out = Gradients::new();
        if !self.nodes[loss.0].requires_grad {
            return Ok(out);
        }
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            match node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(id, &g),
                Op::Linear { x, w, b } => {
                    let xv = self.value(x);
                    let wv = self.value(w);
                    if self.rg(x) {
                        let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                        for r in 0..g.rows() {
                            let dxr = dx.row_mut(r);
                            for (o, &go) in g.row(r).iter().enumerate() {
                                if go != 0.0 {
                                    axpy(go, wv.row(o), dxr);
                                }
                            }
                        }
                        accumulate(&mut grads, x, dx);
                    }
                    if self.rg(w) {
                        let mut dw = Matrix::zeros(wv.rows(), wv.cols());
                        for r in 0..g.rows() {
                            let xr = xv.row(r);
                            for (o, &go) in g.row(r).iter().enumerate() {
                                if go != 0.0 {
                                    axpy(go, xr, dw.row_mut(o));
                                }
                            }
                        }
                        accumulate(&mut grads, w, dw);
                    }
                    if let Some(b) = b.filter(|b| self.rg(*b)) {
                        let mut db = Matrix::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            axpy(1.0, g.row(r), db.row_mut(0));
                        }
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, g.clone());
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let da = g.zip_map(self.value(b), |g, y| g * y);
                        accumulate(&mut grads, a, da);
                    }
                    if self.rg(b) {
                        let db = g.zip_map(self.value(a), |g, x| g * x);
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::Scale(a, factor) => accumulate(&mut grads, a, g.map(|x| x * factor)),
                Op::Tanh(a) => {
                    let y = node.value.as_ref().expect("op node has a value");
                    accumulate(&mut grads, a, g.zip_map(y, |g, y| g * (1.0 - y * y)));
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().expect("op node has a value");
                    accumulate(&mut grads, a, g.zip_map(y, |g, y| g * y * (1.0 - y)));
                }
                Op::Exp(a) => {
                    let y = node.value.as_ref().expect("op node has a value");
                    accumulate(&mut grads, a, g.zip_map(y, |g, y| g * y));
                }
                Op::Clamp { x, lo, hi } => {
                    let da = g.zip_map(self.value(x), |g, x| {
                        if (lo..=hi).contains(&x) {
                            g
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads, x, da);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(x);
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        dx.row_mut(r)[start..start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(a).cols();
                    let cb = self.value(b).cols();
                    if self.rg(a) {
                        let mut da = Matrix::zeros(g.rows(), ca);
                        for r in 0..g.rows() {
                            da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        accumulate(&mut grads, a, da);
                    }
                    if self.rg(b) {
                        let mut db = Matrix::zeros(g.rows(), cb);
                        for r in 0..g.rows() {
                            db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        accumulate(&mut grads, b, db);
                    }
                }
                Op::ConcatRows(ref parts) => {
                    let mut row = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        if self.rg(p) {
                            let slice = g.data()[row * g.cols()..(row + rows) * g.cols()].to_vec();
                            accumulate(&mut grads, p, Matrix::from_vec(rows, g.cols(), slice));
                        }
                        row += rows;
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(a).shape();
                    accumulate(&mut grads, a, Matrix::filled(r, c, g.item()));
                }
                Op::LogSoftmax(a) => {
                    let y = node.value.as_ref().expect("op node has a value");
                    let mut da = g.clone();
                    for r in 0..g.rows() {
                        let total: f64 = g.row(r).iter().sum();
                        for (d, ly) in da.row_mut(r).iter_mut().zip(y.row(r)) {
                            *d -= ly.exp() * total;
                        }
                    }
                    accumulate(&mut grads, a, da);
                }
            }
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_parameters_has_unit_gradients() {
        let mut store = ParamStore::new();
        let a = store
            .register("a", Matrix::from_vec(2, 2, vec![0.3, -1.0, 2.0, 4.0]))
            .unwrap();
        let b = store.register("b", Matrix::row_vector(&[5.0, 6.0, 7.0])).unwrap();
        let mut g = Graph::new(&store);
        let (va, vb) = (g.param(a), g.param(b));
        let (sa, sb) = (g.sum(va), g.sum(vb));
        let loss = g.add(sa, sb).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(a).unwrap().data().iter().all(|&x| x == 1.0));
        assert!(grads.get(b).unwrap().data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new();
        let a = store.register("a", Matrix::row_vector(&[1.0, 2.0])).unwrap();
        let b = store.register("b", Matrix::row_vector(&[3.0, 4.0])).unwrap();
        let mut g = Graph::new(&store);
        let va = g.param(a);
        let vb = g.param(b);
        let zero = g.scale(vb, 0.0);
        let sq = g.square(va);
        let both = g.add(sq, zero).unwrap();
        let loss = g.sum(both);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(a).unwrap().data(), &[2.0, 4.0]);
        assert_eq!(grads.get(b).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn frozen_parameter_has_no_gradient_entry() {
        let mut store = ParamStore::new();
        let a = store.register("frozen.a", Matrix::row_vector(&[1.0])).unwrap();
        let b = store.register("b", Matrix::row_vector(&[2.0])).unwrap();
        store.freeze("frozen").unwrap();
        let mut g = Graph::new(&store);
        let (va, vb) = (g.param(a), g.param(b));
        let prod = g.mul(va, vb).unwrap();
        let loss = g.sum(prod);
        let grads = g.backward(loss).unwrap();
        assert!(!grads.contains(a));
        assert_eq!(grads.get(b).unwrap().item(), 1.0);
    }

    #[test]
    fn non_finite_loss_is_rejected() {
        let mut store = ParamStore::new();
        let a = store.register("a", Matrix::scalar(800.0)).unwrap();
        let mut g = Graph::new(&store);
        let va = g.param(a);
        let e = g.exp(va);
        let big = g.exp(e);
        assert!(matches!(g.backward(big), Err(Error::NonFiniteLoss(_))));
    }

    #[test]
    fn log_softmax_normalises() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.input_row(&[1.0, 2.0, -3.0]);
        let ls = g.log_softmax(x);
        let total: f64 = g.value(ls).data().iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_rejects_wrong_width() {
        let mut store = ParamStore::new();
        let w = store.register("w", Matrix::zeros(3, 4)).unwrap();
        let mut g = Graph::new(&store);
        let x = g.input_row(&[1.0, 2.0]);
        let wv = g.param(w);
        assert!(matches!(
            g.linear(x, wv, None),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
