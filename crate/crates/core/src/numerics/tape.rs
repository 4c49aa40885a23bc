//! Define-by-run reverse-mode differentiation.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to its
//! [`Tape`]. [`Tape::backward`] walks the nodes in reverse insertion order,
//! which is a valid reverse topological order because a node can only refer
//! to nodes created before it. A tape can be differentiated once.

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    MatMul(usize, usize),
    BatchMatMul(usize, usize),
    TransposeLast(usize),
    Reshape(usize),
    Concat(Vec<usize>),
    Sum(usize),
    Mean(usize),
    MeanAxis(usize, usize),
    SumLast(usize),
    Softmax(usize),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Square(usize),
    Pow(usize, f64),
    Clamp(usize, f64, f64),
    Pick(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
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

/// Gradients produced by [`Tape::backward`], indexed by variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `var`, or `None` if `var` does not require one.
    pub fn wrt(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}

fn finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn elementwise(a: &Tensor, b: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape(), data)
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|x| f(*x)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m×n] += a[m×k] · b[n×k]ᵀ`
fn gemm_bt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_at(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn transpose_last(data: &[f64], batch: usize, r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for b in 0..batch {
        let off = b * r * c;
        for i in 0..r {
            for j in 0..c {
                out[off + j * r + i] = data[off + i * c + j];
            }
        }
    }
    out
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn axis_extents(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf value. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Result<Var<'_>> {
        finite("leaf", &value)?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&self, value: Tensor) -> Result<Var<'_>> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Result<Var<'_>> {
        self.constant(Tensor::scalar(value))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Consumes the tape: a second call returns an error. Gradients are
    /// returned rather than stored so that callers decide which parameter
    /// slots to accumulate into.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Graph("loss belongs to a different tape".into()));
        }
        if self.consumed.get() {
            return Err(Error::Graph("graph already consumed".into()));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Graph(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            {
                let mut acc = |pid: usize, contrib: &dyn Fn(&mut [f64])| {
                    if !nodes[pid].requires_grad {
                        return;
                    }
                    let slot =
                        grads[pid].get_or_insert_with(|| vec![0.0; nodes[pid].value.numel()]);
                    contrib(slot);
                };
                let val = |pid: usize| nodes[pid].value.data();
                let out = node.value.data();
                match &node.op {
                    Op::Leaf => {}
                    Op::Add(a, b) => {
                        acc(*a, &|s| add_into(s, &g));
                        acc(*b, &|s| add_into(s, &g));
                    }
                    Op::Sub(a, b) => {
                        acc(*a, &|s| add_into(s, &g));
                        acc(*b, &|s| s.iter_mut().zip(&g).for_each(|(s, g)| *s -= g));
                    }
                    Op::Mul(a, b) => {
                        let (av, bv) = (val(*a), val(*b));
                        acc(*a, &|s| {
                            for i in 0..s.len() {
                                s[i] += g[i] * bv[i];
                            }
                        });
                        acc(*b, &|s| {
                            for i in 0..s.len() {
                                s[i] += g[i] * av[i];
                            }
                        });
                    }
                    Op::Div(a, b) => {
                        let (av, bv) = (val(*a), val(*b));
                        acc(*a, &|s| {
                            for i in 0..s.len() {
                                s[i] += g[i] / bv[i];
                            }
                        });
                        acc(*b, &|s| {
                            for i in 0..s.len() {
                                s[i] -= g[i] * av[i] / (bv[i] * bv[i]);
                            }
                        });
                    }
                    Op::AddRow(x, r) => {
                        acc(*x, &|s| add_into(s, &g));
                        let w = nodes[*r].value.numel();
                        acc(*r, &|s| {
                            for (i, gv) in g.iter().enumerate() {
                                s[i % w] += gv;
                            }
                        });
                    }
                    Op::Scale(x, c) => acc(*x, &|s| {
                        for (s, gv) in s.iter_mut().zip(&g) {
                            *s += c * gv;
                        }
                    }),
                    Op::Shift(x) => acc(*x, &|s| add_into(s, &g)),
                    Op::MatMul(a, b) => {
                        let bshape = nodes[*b].value.shape();
                        let (k, n) = (bshape[0], bshape[1]);
                        let m = nodes[*a].value.numel() / k;
                        let (av, bv) = (val(*a), val(*b));
                        acc(*a, &|s| gemm_bt(&g, bv, s, m, n, k));
                        acc(*b, &|s| gemm_at(av, &g, s, m, k, n));
                    }
                    Op::BatchMatMul(a, b) => {
                        let ash = nodes[*a].value.shape();
                        let bsh = nodes[*b].value.shape();
                        let (batch, m, k, n) = (ash[0], ash[1], ash[2], bsh[2]);
                        let (av, bv) = (val(*a), val(*b));
                        acc(*a, &|s| {
                            for bi in 0..batch {
                                gemm_bt(
                                    &g[bi * m * n..(bi + 1) * m * n],
                                    &bv[bi * k * n..(bi + 1) * k * n],
                                    &mut s[bi * m * k..(bi + 1) * m * k],
                                    m,
                                    n,
                                    k,
                                );
                            }
                        });
                        acc(*b, &|s| {
                            for bi in 0..batch {
                                gemm_at(
                                    &av[bi * m * k..(bi + 1) * m * k],
                                    &g[bi * m * n..(bi + 1) * m * n],
                                    &mut s[bi * k * n..(bi + 1) * k * n],
                                    m,
                                    k,
                                    n,
                                );
                            }
                        });
                    }
                    Op::TransposeLast(x) => {
                        let sh = node.value.shape();
                        let (r, c) = (sh[sh.len() - 2], sh[sh.len() - 1]);
                        let batch = node.value.numel() / (r * c);
                        let gt = transpose_last(&g, batch, r, c);
                        acc(*x, &|s| add_into(s, &gt));
                    }
                    Op::Reshape(x) => acc(*x, &|s| add_into(s, &g)),
                    Op::Concat(parts) => {
                        let total = *node.value.shape().last().unwrap();
                        let rows = node.value.numel() / total;
                        let mut offset = 0;
                        for &p in parts {
                            let w = *nodes[p].value.shape().last().unwrap();
                            acc(p, &|s| {
                                for r in 0..rows {
                                    for j in 0..w {
                                        s[r * w + j] += g[r * total + offset + j];
                                    }
                                }
                            });
                            offset += w;
                        }
                    }
                    Op::Sum(x) => acc(*x, &|s| s.iter_mut().for_each(|v| *v += g[0])),
                    Op::Mean(x) => {
                        let n = nodes[*x].value.numel() as f64;
                        acc(*x, &|s| s.iter_mut().for_each(|v| *v += g[0] / n));
                    }
                    Op::MeanAxis(x, axis) => {
                        let (outer, len, inner) = axis_extents(nodes[*x].value.shape(), *axis);
                        acc(*x, &|s| {
                            for o in 0..outer {
                                for l in 0..len {
                                    for i in 0..inner {
                                        s[(o * len + l) * inner + i] += g[o * inner + i] / len as f64;
                                    }
                                }
                            }
                        });
                    }
                    Op::SumLast(x) => {
                        let w = *nodes[*x].value.shape().last().unwrap();
                        acc(*x, &|s| {
                            for (i, v) in s.iter_mut().enumerate() {
                                *v += g[i / w];
                            }
                        });
                    }
                    Op::Softmax(x) => {
                        let w = *node.value.shape().last().unwrap();
                        acc(*x, &|s| {
                            for r in 0..s.len() / w {
                                let y = &out[r * w..(r + 1) * w];
                                let gr = &g[r * w..(r + 1) * w];
                                let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                                for j in 0..w {
                                    s[r * w + j] += y[j] * (gr[j] - dot);
                                }
                            }
                        });
                    }
                    Op::Relu(x) => {
                        let xv = val(*x);
                        acc(*x, &|s| {
                            for i in 0..s.len() {
                                if xv[i] > 0.0 {
                                    s[i] += g[i];
                                }
                            }
                        });
                    }
                    Op::Sigmoid(x) => acc(*x, &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * out[i] * (1.0 - out[i]);
                        }
                    }),
                    Op::Exp(x) => acc(*x, &|s| {
                        for i in 0..s.len() {
                            s[i] += g[i] * out[i];
                        }
                    }),
                    Op::Log(x) => {
                        let xv = val(*x);
                        acc(*x, &|s| {
                            for i in 0..s.len() {
                                s[i] += g[i] / xv[i];
                            }
                        });
                    }
                    Op::Square(x) => {
                        let xv = val(*x);
                        acc(*x, &|s| {
                            for i in 0..s.len() {
                                s[i] += 2.0 * xv[i] * g[i];
                            }
                        });
                    }
                    Op::Pow(x, p) => {
                        let xv = val(*x);
                        let p = *p;
                        acc(*x, &|s| {
                            for i in 0..s.len() {
                                // d/dx x^p at x = 0 is taken as 0 for p < 1.
                                let d = if p == 1.0 {
                                    1.0
                                } else if xv[i] == 0.0 {
                                    0.0
                                } else {
                                    p * xv[i].powf(p - 1.0)
                                };
                                s[i] += g[i] * d;
                            }
                        });
                    }
                    Op::Clamp(x, lo, hi) => {
                        let xv = val(*x);
                        acc(*x, &|s| {
                            for i in 0..s.len() {
                                if xv[i] >= *lo && xv[i] <= *hi {
                                    s[i] += g[i];
                                }
                            }
                        });
                    }
                    Op::Pick(x, idx) => {
                        let c = *nodes[*x].value.shape().last().unwrap();
                        acc(*x, &|s| {
                            for (r, &j) in idx.iter().enumerate() {
                                s[r * c + j] += g[r];
                            }
                        });
                    }
                }
            }
            grads[id] = Some(g);
        }

        for (g, node) in grads.iter_mut().zip(nodes.iter()) {
            if g.is_none() && node.requires_grad {
                *g = Some(vec![0.0; node.value.numel()]);
            }
        }
        Ok(Gradients { grads })
    }
}

fn add_into(s: &mut [f64], g: &[f64]) {
    for (s, g) in s.iter_mut().zip(g) {
        *s += g;
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the recorded value.
    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> Result<f64> {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.rg(self.id)
    }

    fn check_same(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Graph("operands recorded on different tapes".into()))
        }
    }

    fn unary(
        &self,
        name: &'static str,
        op: Op,
        f: impl FnOnce(&Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value)?
        };
        finite(name, &value)?;
        Ok(self.tape.push(value, op, self.requires_grad()))
    }

    fn binary(
        &self,
        other: &Var<'t>,
        name: &'static str,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'t>> {
        self.check_same(other)?;
        let value = {
            let nodes = self.tape.nodes.borrow();
            f(&nodes[self.id].value, &nodes[other.id].value)?
        };
        finite(name, &value)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(value, op, rg))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| {
            elementwise(a, b, "add", |x, y| x + y)
        })
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| {
            elementwise(a, b, "sub", |x, y| x - y)
        })
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| {
            elementwise(a, b, "mul", |x, y| x * y)
        })
    }

    pub fn div(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "div", Op::Div(self.id, other.id), |a, b| {
            if b.data().iter().any(|v| *v == 0.0) {
                return Err(Error::domain("div", "division by zero"));
            }
            elementwise(a, b, "div", |x, y| x / y)
        })
    }

    /// Adds a vector along the last axis (bias broadcast).
    pub fn add_row(&self, row: &Var<'t>) -> Result<Var<'t>> {
        self.binary(row, "add_row", Op::AddRow(self.id, row.id), |x, r| {
            let w = *x.shape().last().unwrap_or(&1);
            if r.numel() != w {
                return Err(Error::shape(
                    "add_row",
                    format!("row of {} values against last axis {w}", r.numel()),
                ));
            }
            let rv = r.data();
            let data = x
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + rv[i % w])
                .collect();
            Tensor::new(x.shape(), data)
        })
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        self.unary("scale", Op::Scale(self.id, c), |x| Ok(map(x, |v| v * c)))
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::Shift(self.id), |x| Ok(map(x, |v| v + c)))
    }

    /// `x · w` where `x` has shape `[.., k]` and `w` is `[k, n]`; leading
    /// axes of `x` are treated as a batch.
    pub fn matmul(&self, w: &Var<'t>) -> Result<Var<'t>> {
        self.binary(w, "matmul", Op::MatMul(self.id, w.id), |x, w| {
            let (xs, ws) = (x.shape(), w.shape());
            if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[0] {
                return Err(Error::shape("matmul", format!("{xs:?} x {ws:?}")));
            }
            let (k, n) = (ws[0], ws[1]);
            let m = x.numel() / k;
            let mut out = vec![0.0; m * n];
            gemm(x.data(), w.data(), &mut out, m, k, n);
            let mut shape = xs.to_vec();
            *shape.last_mut().unwrap() = n;
            Tensor::new(&shape, out)
        })
    }

    /// Batched product `[b, m, k] x [b, k, n] -> [b, m, n]`.
    pub fn bmm(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "bmm", Op::BatchMatMul(self.id, other.id), |a, b| {
            let (as_, bs) = (a.shape(), b.shape());
            if as_.len() != 3 || bs.len() != 3 || as_[0] != bs[0] || as_[2] != bs[1] {
                return Err(Error::shape("bmm", format!("{as_:?} x {bs:?}")));
            }
            let (batch, m, k, n) = (as_[0], as_[1], as_[2], bs[2]);
            let mut out = vec![0.0; batch * m * n];
            for bi in 0..batch {
                gemm(
                    &a.data()[bi * m * k..(bi + 1) * m * k],
                    &b.data()[bi * k * n..(bi + 1) * k * n],
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            Tensor::new(&[batch, m, n], out)
        })
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        self.unary("transpose", Op::TransposeLast(self.id), |x| {
            let sh = x.shape();
            if sh.len() < 2 {
                return Err(Error::shape("transpose", format!("rank {} < 2", sh.len())));
            }
            let (r, c) = (sh[sh.len() - 2], sh[sh.len() - 1]);
            let batch = x.numel() / (r * c);
            let mut shape = sh.to_vec();
            let l = shape.len();
            shape.swap(l - 2, l - 1);
            Tensor::new(&shape, transpose_last(x.data(), batch, r, c))
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary("reshape", Op::Reshape(self.id), |x| x.reshaped(shape))
    }

    /// Outer product. Vectors `[p]`, `[q]` give `[p, q]`; batches `[m, p]`,
    /// `[m, q]` give `[m, p, q]` with one outer product per row.
    pub fn outer(&self, other: &Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.shape(), other.shape());
        match (a.as_slice(), b.as_slice()) {
            ([p], [q]) => self.reshape(&[*p, 1])?.matmul(&other.reshape(&[1, *q])?),
            ([m, p], [m2, q]) if m == m2 => self
                .reshape(&[*m, *p, 1])?
                .bmm(&other.reshape(&[*m, 1, *q])?),
            _ => Err(Error::shape("outer", format!("{a:?} (x) {b:?}"))),
        }
    }

    /// Concatenates along the last axis; all parts share their leading axes.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no operands"))?;
        for p in parts {
            first.check_same(p)?;
        }
        let tape = first.tape;
        let value = {
            let nodes = tape.nodes.borrow();
            let vals: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            let lead = &vals[0].shape()[..vals[0].rank() - 1];
            let rows: usize = lead.iter().product();
            let mut total = 0;
            for v in &vals {
                if &v.shape()[..v.rank() - 1] != lead {
                    return Err(Error::shape(
                        "concat",
                        format!("{:?} vs {:?}", v.shape(), vals[0].shape()),
                    ));
                }
                total += v.shape()[v.rank() - 1];
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for v in &vals {
                    let w = v.shape()[v.rank() - 1];
                    data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            Tensor::new(&shape, data)?
        };
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(tape.push(value, Op::Concat(parts.iter().map(|p| p.id).collect()), rg))
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        self.unary("sum", Op::Sum(self.id), |x| {
            Ok(Tensor::scalar(x.data().iter().sum()))
        })
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        self.unary("mean", Op::Mean(self.id), |x| {
            Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64))
        })
    }

    /// Mean over one axis, removing it.
    pub fn mean_axis(&self, axis: usize) -> Result<Var<'t>> {
        self.unary("mean_axis", Op::MeanAxis(self.id, axis), |x| {
            if axis >= x.rank() {
                return Err(Error::shape("mean_axis", format!("axis {axis} of {:?}", x.shape())));
            }
            let (outer, len, inner) = axis_extents(x.shape(), axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for i in 0..inner {
                        out[o * inner + i] += x.data()[(o * len + l) * inner + i];
                    }
                }
            }
            out.iter_mut().for_each(|v| *v /= len as f64);
            let mut shape = x.shape().to_vec();
            shape.remove(axis);
            Tensor::new(&shape, out)
        })
    }

    /// Sum over the last axis, removing it.
    pub fn sum_last(&self) -> Result<Var<'t>> {
        self.unary("sum_last", Op::SumLast(self.id), |x| {
            if x.rank() == 0 {
                return Err(Error::shape("sum_last", "scalar operand"));
            }
            let w = *x.shape().last().unwrap();
            let out = x.data().chunks(w).map(|c| c.iter().sum()).collect();
            Tensor::new(&x.shape()[..x.rank() - 1], out)
        })
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t>> {
        self.unary("softmax", Op::Softmax(self.id), |x| {
            let w = *x.shape().last().unwrap_or(&1);
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(w) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    z += *v;
                }
                row.iter_mut().for_each(|v| *v /= z);
            }
            Tensor::new(x.shape(), out)
        })
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        self.unary("relu", Op::Relu(self.id), |x| Ok(map(x, |v| v.max(0.0))))
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid(self.id), |x| {
            Ok(map(x, |v| 1.0 / (1.0 + (-v).exp())))
        })
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp(self.id), |x| Ok(map(x, f64::exp)))
    }

    pub fn log(&self) -> Result<Var<'t>> {
        self.unary("log", Op::Log(self.id), |x| {
            if x.data().iter().any(|v| *v <= 0.0) {
                return Err(Error::domain("log", "non-positive argument"));
            }
            Ok(map(x, f64::ln))
        })
    }

    pub fn square(&self) -> Result<Var<'t>> {
        self.unary("square", Op::Square(self.id), |x| Ok(map(x, |v| v * v)))
    }

    /// Elementwise power for non-negative bases.
    pub fn powf(&self, p: f64) -> Result<Var<'t>> {
        self.unary("pow", Op::Pow(self.id, p), |x| {
            if x.data().iter().any(|v| *v < 0.0) {
                return Err(Error::domain("pow", "negative base"));
            }
            Ok(map(x, |v| v.powf(p)))
        })
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.unary("clamp", Op::Clamp(self.id, lo, hi), |x| {
            Ok(map(x, |v| v.clamp(lo, hi)))
        })
    }

    /// Selects one entry per row: `[n, c] -> [n]`, entry `(i, idx[i])`.
    pub fn pick(&self, idx: &[usize]) -> Result<Var<'t>> {
        self.unary("pick", Op::Pick(self.id, idx.to_vec()), |x| {
            let sh = x.shape();
            if sh.len() != 2 || sh[0] != idx.len() {
                return Err(Error::shape("pick", format!("{sh:?} with {} indices", idx.len())));
            }
            let c = sh[1];
            let mut out = Vec::with_capacity(idx.len());
            for (r, &j) in idx.iter().enumerate() {
                if j >= c {
                    return Err(Error::shape("pick", format!("index {j} out of range {c}")));
                }
                out.push(x.data()[r * c + j]);
            }
            Tensor::new(&[idx.len()], out)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn outer_product_by_hand() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = tape.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
        let c = a.outer(&b).unwrap().value();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0; 3])).unwrap();
        for p in x.softmax().unwrap().value().data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_matmul() {
        let tape = Tape::new();
        let m = t(&[3, 2], &[1.0, -2.0, 3.5, 4.0, 0.0, 7.0]);
        let i = tape.constant(Tensor::identity(3)).unwrap();
        let mv = tape.constant(m.clone()).unwrap();
        assert_eq!(i.matmul(&mv).unwrap().value(), m);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        let loss = w.mul(&w).unwrap().sum().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_has_zero_grad() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        let _unused = w.square().unwrap();
        let c = tape.scalar(3.0).unwrap();
        let g = tape.backward(c).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let w = tape.leaf(Tensor::vector(vec![1.0, 2.0]), true).unwrap();
        assert!(matches!(tape.backward(w), Err(Error::Graph(_))));
        let loss = w.sum().unwrap();
        tape.backward(loss).unwrap();
        let err = tape.backward(loss).unwrap_err();
        assert!(err.to_string().contains("already consumed"));
    }

    #[test]
    fn domain_and_shape_errors_name_the_op() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
        let e = x.log().unwrap_err();
        assert!(matches!(e, Error::Domain { op: "log", .. }));
        let y = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(x.add(&y), Err(Error::Shape { op: "add", .. })));
        let big = tape.constant(Tensor::vector(vec![1000.0])).unwrap();
        assert!(matches!(big.exp(), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn mean_axis_and_transpose() {
        let tape = Tape::new();
        let x = tape
            .constant(t(&[2, 2, 3], &(0..12).map(f64::from).collect::<Vec<_>>()))
            .unwrap();
        let m = x.mean_axis(1).unwrap().value();
        assert_eq!(m.shape(), &[2, 3]);
        assert_eq!(m.data(), &[1.5, 2.5, 3.5, 7.5, 8.5, 9.5]);
        let tr = x.transpose().unwrap().value();
        assert_eq!(tr.shape(), &[2, 3, 2]);
        assert_eq!(tr.at(&[1, 2, 0]), x.value().at(&[1, 0, 2]));
    }

    #[test]
    fn concat_and_pick() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 1], &[1.0, 2.0])).unwrap();
        let b = tape.constant(t(&[2, 2], &[3.0, 4.0, 5.0, 6.0])).unwrap();
        let c = Var::concat(&[a, b]).unwrap();
        assert_eq!(c.value().data(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
        let p = c.pick(&[2, 0]).unwrap();
        assert_eq!(p.value().data(), &[4.0, 2.0]);
        assert!(c.pick(&[3, 0]).is_err());
    }
}
