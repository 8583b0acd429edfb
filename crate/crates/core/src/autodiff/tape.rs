use std::collections::HashMap;
use std::sync::Arc;

use super::param::{ParamId, ParamStore};
use super::sparse::Csr;
use super::tensor::{gemm, Tensor};
use crate::error::{LlcError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Reduce or join along rows (axis 0).
    Rows,
    /// Reduce or join along columns (axis 1).
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Elu,
    LeakyRelu(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Sum,
    Mean,
    Max,
}

/// How one operand of a binary op is laid over the output grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Spread {
    Same,
    /// `1 x n` row repeated down the rows.
    Row,
    /// `m x 1` column repeated across the columns.
    Col,
}

impl Spread {
    #[inline]
    fn index(self, r: usize, c: usize, cols: usize) -> usize {
        match self {
            Spread::Same => r * cols + c,
            Spread::Row => c,
            Spread::Col => r,
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Spread, Var, Spread),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Unary(Unary, Var),
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    Concat(Vec<Var>, Axis),
    Slice(Var, Axis, usize),
    Reduce(Reduce, Vec<Var>, Vec<u32>),
    SumAll(Var),
    CrossEntropy {
        logits: Var,
        mask: Vec<usize>,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    SpMM(Arc<Csr>, Var),
    Attention {
        z: Var,
        src: Var,
        dst: Var,
        adj: Arc<Csr>,
        slope: f64,
        pre: Vec<f64>,
        coef: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// Reverse-mode gradient record.
///
/// Operations append nodes in creation order, so the node list is already
/// topologically sorted. [`Tape::backward`] walks it once in reverse and
/// then freezes the tape; [`Tape::reset`] clears it for the next pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    frozen: bool,
}

/// Gradients produced by one backward pass, indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
    shapes: Vec<[usize; 2]>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Writes (overwriting) the gradient of every parameter leaf into `store`.
    pub fn write_to(&self, store: &mut ParamStore) {
        for &(id, node) in &self.params {
            store.set_grad(id, self.wrt(Var(node)));
        }
    }

    /// Parameters that appeared on the tape.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.params.iter().map(|&(id, _)| id).collect()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> LlcError {
    LlcError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
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

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.bound.clear();
        self.frozen = false;
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if self.frozen {
            return Err(LlcError::State(
                "tape is frozen after backward; reset it before recording".into(),
            ));
        }
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a constant (or a leaf whose gradient is wanted by the caller).
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Records a trainable parameter from `store`. Binding the same
    /// parameter twice returns the same leaf, so its gradient collects
    /// every use.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.bound.get(&id) {
            return Ok(v);
        }
        let v = self.push(store.value(id).clone(), Op::Leaf)?;
        self.nodes[v.0].param = Some(id);
        self.bound.insert(id, v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    /// Elementwise binary op.
    ///
    /// Operands must have equal shapes, except that a `1 x n` row or an
    /// `m x 1` column may be broadcast against an `m x n` operand. No other
    /// broadcasting is performed.
    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let [ra, ca] = ta.shape();
        let [rb, cb] = tb.shape();
        let (rows, cols, sa, sb) = if ra == rb && ca == cb {
            (ra, ca, Spread::Same, Spread::Same)
        } else if rb == 1 && cb == ca {
            (ra, ca, Spread::Same, Spread::Row)
        } else if cb == 1 && rb == ra {
            (ra, ca, Spread::Same, Spread::Col)
        } else if ra == 1 && ca == cb {
            (rb, cb, Spread::Row, Spread::Same)
        } else if ca == 1 && ra == rb {
            (rb, cb, Spread::Col, Spread::Same)
        } else {
            return Err(shape_err(
                match kind {
                    Binary::Add => "add",
                    Binary::Sub => "sub",
                    Binary::Mul => "mul",
                },
                ta,
                tb,
            ));
        };
        let (da, db) = (ta.data(), tb.data());
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let x = da[sa.index(r, c, cols)];
                let y = db[sb.index(r, c, cols)];
                out.push(match kind {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                });
            }
        }
        let value = Tensor::new(rows, cols, out)?;
        self.push(value, Op::Binary(kind, a, sa, b, sb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c))
    }

    /// Multiplies every element of `a` by the `1 x 1` value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.shape() != [1, 1] {
            return Err(shape_err("scale_by", self.value(a), ts));
        }
        let k = ts.item();
        let out = self.value(a).scale(k);
        self.push(out, Op::ScaleBy(a, s))
    }

    pub fn unary(&mut self, kind: Unary, a: Var) -> Result<Var> {
        let x = self.value(a);
        let out = match kind {
            Unary::Relu => x.map(|v| v.max(0.0)),
            Unary::Sigmoid => x.map(sigmoid),
            Unary::Tanh => x.map(f64::tanh),
            Unary::Exp => x.map(f64::exp),
            Unary::Log => {
                if let Some(bad) = x.data().iter().find(|&&v| v <= 0.0 || v.is_nan()) {
                    return Err(LlcError::Domain {
                        op: "log",
                        detail: format!("argument {bad} is not positive"),
                    });
                }
                x.map(f64::ln)
            }
            Unary::Elu => x.map(|v| if v > 0.0 { v } else { v.exp_m1() }),
            Unary::LeakyRelu(slope) => x.map(|v| if v > 0.0 { v } else { slope * v }),
        };
        self.push(out, Op::Unary(kind, a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Relu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Log, a)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(Unary::Elu, a)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(Unary::LeakyRelu(slope), a)
    }

    fn lanes(shape: [usize; 2], axis: Axis) -> (usize, usize, usize, usize) {
        // (lane count, lane length, lane stride, element stride)
        match axis {
            Axis::Cols => (shape[0], shape[1], shape[1], 1),
            Axis::Rows => (shape[1], shape[0], 1, shape[1]),
        }
    }

    /// Softmax along `axis` with max-subtraction.
    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let x = self.value(a);
        let mut out = x.clone();
        let (lanes, len, ls, es) = Self::lanes(x.shape(), axis);
        let d = out.data_mut();
        for l in 0..lanes {
            let base = l * ls;
            let m = (0..len).map(|i| d[base + i * es]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for i in 0..len {
                let e = (d[base + i * es] - m).exp();
                d[base + i * es] = e;
                z += e;
            }
            for i in 0..len {
                d[base + i * es] /= z;
            }
        }
        self.push(out, Op::Softmax(a, axis))
    }

    pub fn log_softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        let x = self.value(a);
        let mut out = x.clone();
        let (lanes, len, ls, es) = Self::lanes(x.shape(), axis);
        let d = out.data_mut();
        for l in 0..lanes {
            let base = l * ls;
            let m = (0..len).map(|i| d[base + i * es]).fold(f64::NEG_INFINITY, f64::max);
            let lse = m + (0..len).map(|i| (d[base + i * es] - m).exp()).sum::<f64>().ln();
            for i in 0..len {
                d[base + i * es] -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(a, axis))
    }

    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| LlcError::arg("concat of an empty list"))?;
        if parts.len() == 1 {
            return Ok(first);
        }
        let t0 = self.value(first);
        let (mut rows, mut cols) = (t0.rows(), t0.cols());
        for &p in &parts[1..] {
            let t = self.value(p);
            match axis {
                Axis::Cols if t.rows() == t0.rows() => cols += t.cols(),
                Axis::Rows if t.cols() == t0.cols() => rows += t.rows(),
                _ => return Err(shape_err("concat", t0, t)),
            }
        }
        let mut out = Vec::with_capacity(rows * cols);
        match axis {
            Axis::Rows => {
                for &p in parts {
                    out.extend_from_slice(self.value(p).data());
                }
            }
            Axis::Cols => {
                for r in 0..rows {
                    for &p in parts {
                        out.extend_from_slice(self.value(p).row_slice(r));
                    }
                }
            }
        }
        let value = Tensor::new(rows, cols, out)?;
        self.push(value, Op::Concat(parts.to_vec(), axis))
    }

    /// Takes `len` consecutive rows or columns starting at `start`.
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let extent = match axis {
            Axis::Rows => x.rows(),
            Axis::Cols => x.cols(),
        };
        if len == 0 || start + len > extent {
            return Err(LlcError::arg(format!(
                "slice {start}..{} out of range for {:?}",
                start + len,
                x.shape()
            )));
        }
        let value = match axis {
            Axis::Rows => Tensor::new(
                len,
                x.cols(),
                x.data()[start * x.cols()..(start + len) * x.cols()].to_vec(),
            )?,
            Axis::Cols => {
                let mut out = Vec::with_capacity(x.rows() * len);
                for r in 0..x.rows() {
                    out.extend_from_slice(&x.row_slice(r)[start..start + len]);
                }
                Tensor::new(x.rows(), len, out)?
            }
        };
        self.push(value, Op::Slice(a, axis, start))
    }

    /// Elementwise reduction across a list of equally shaped tensors.
    ///
    /// For `Max`, the gradient goes to the first input (in list order)
    /// attaining the maximum.
    pub fn reduce(&mut self, kind: Reduce, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| LlcError::arg("reduction over an empty list"))?;
        let t0 = self.value(first);
        for &p in &parts[1..] {
            if self.value(p).shape() != t0.shape() {
                return Err(shape_err("reduce", t0, self.value(p)));
            }
        }
        let mut out = t0.clone();
        let mut arg = Vec::new();
        match kind {
            Reduce::Sum | Reduce::Mean => {
                for &p in &parts[1..] {
                    out.add_assign(self.value(p));
                }
                if kind == Reduce::Mean && parts.len() > 1 {
                    let inv = parts.len() as f64;
                    out.data_mut().iter_mut().for_each(|x| *x /= inv);
                }
            }
            Reduce::Max => {
                arg = vec![0u32; out.len()];
                for (k, &p) in parts.iter().enumerate().skip(1) {
                    for (i, &x) in self.value(p).data().iter().enumerate() {
                        if x > out.data()[i] {
                            out.data_mut()[i] = x;
                            arg[i] = k as u32;
                        }
                    }
                }
            }
        }
        self.push(out, Op::Reduce(kind, parts.to_vec(), arg))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Mean negative log-likelihood over the rows in `mask`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize], mask: &[usize]) -> Result<Var> {
        if mask.is_empty() {
            return Err(LlcError::arg("cross-entropy over an empty mask"));
        }
        let x = self.value(logits);
        let c = x.cols();
        let mut probs = Vec::with_capacity(mask.len() * c);
        let mut picked = Vec::with_capacity(mask.len());
        let mut loss = 0.0;
        for &row in mask {
            if row >= x.rows() {
                return Err(LlcError::arg(format!("mask row {row} out of range")));
            }
            let label = labels[row];
            if label >= c {
                return Err(LlcError::arg(format!("label {label} outside [0, {c})")));
            }
            let r = x.row_slice(row);
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = r.iter().map(|v| (v - m).exp()).sum();
            loss -= r[label] - m - z.ln();
            probs.extend(r.iter().map(|v| (v - m).exp() / z));
            picked.push(label);
        }
        loss /= mask.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                mask: mask.to_vec(),
                labels: picked,
                probs,
            },
        )
    }

    /// Sparse-times-dense product with a constant sparse operand.
    pub fn spmm(&mut self, a: &Arc<Csr>, h: Var) -> Result<Var> {
        let x = self.value(h);
        if a.n_cols() != x.rows() {
            return Err(LlcError::Shape {
                op: "spmm",
                left: [a.n_rows(), a.n_cols()],
                right: x.shape(),
            });
        }
        let d = x.cols();
        let mut out = Tensor::zeros(a.n_rows(), d);
        for r in 0..a.n_rows() {
            let dst = &mut out.data_mut()[r * d..(r + 1) * d];
            for (&c, &w) in a.row_indices(r).iter().zip(a.row_values(r)) {
                for (o, v) in dst.iter_mut().zip(x.row_slice(c)) {
                    *o += w * v;
                }
            }
        }
        self.push(out, Op::SpMM(Arc::clone(a), h))
    }

    /// Neighborhood attention: for each destination row `v` of `adj`,
    /// `out_v = sum_u a_uv z_u` with `a_uv = softmax_u(leaky(src_u + dst_v))`.
    ///
    /// `src` and `dst` are `N x 1` score columns.
    pub fn neighborhood_attention(
        &mut self,
        adj: &Arc<Csr>,
        z: Var,
        src: Var,
        dst: Var,
        slope: f64,
    ) -> Result<Var> {
        let (tz, ts, td) = (self.value(z), self.value(src), self.value(dst));
        let n = adj.n_rows();
        if tz.rows() != n || ts.shape() != [n, 1] || td.shape() != [n, 1] || adj.n_cols() != n {
            return Err(shape_err("neighborhood_attention", tz, ts));
        }
        let d = tz.cols();
        let mut pre = Vec::with_capacity(adj.nnz());
        let mut coef = Vec::with_capacity(adj.nnz());
        let mut out = Tensor::zeros(n, d);
        for v in 0..n {
            let nbrs = adj.row_indices(v);
            if nbrs.is_empty() {
                continue;
            }
            let start = pre.len();
            for &u in nbrs {
                pre.push(ts.data()[u] + td.data()[v]);
            }
            let e: Vec<f64> = pre[start..]
                .iter()
                .map(|&p| if p > 0.0 { p } else { slope * p })
                .collect();
            let m = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = e.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = w.iter().sum();
            let row = &mut out.data_mut()[v * d..(v + 1) * d];
            for (&u, wu) in nbrs.iter().zip(&w) {
                let a = wu / s;
                coef.push(a);
                for (o, zv) in row.iter_mut().zip(tz.row_slice(u)) {
                    *o += a * zv;
                }
            }
        }
        self.push(
            out,
            Op::Attention {
                z,
                src,
                dst,
                adj: Arc::clone(adj),
                slope,
                pre,
                coef,
            },
        )
    }

    /// Attention coefficients saved by a `neighborhood_attention` node,
    /// laid out in the CSR order of its adjacency.
    pub fn attention_coefficients(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention { coef, .. } => Some(coef),
            _ => None,
        }
    }

    /// Propagates gradients from the scalar `loss` to every node and
    /// freezes the tape.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).shape() != [1, 1] {
            return Err(LlcError::arg(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        if self.frozen {
            return Err(LlcError::State("backward already ran on this tape".into()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.frozen = true;
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (p, i)))
            .collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients {
            grads,
            params,
            shapes,
        })
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                gemm(g, false, tb, true, &mut ga, 0.0);
                accumulate(grads, *a, ga);
                let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                gemm(ta, true, g, false, &mut gb, 0.0);
                accumulate(grads, *b, gb);
            }
            Op::Binary(kind, a, sa, b, sb) => {
                let (ta, tb) = (val(*a), val(*b));
                let cols = g.cols();
                let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                let mut gb = Tensor::zeros(tb.rows(), tb.cols());
                for r in 0..g.rows() {
                    for c in 0..cols {
                        let gi = g.data()[r * cols + c];
                        let ia = sa.index(r, c, cols);
                        let ib = sb.index(r, c, cols);
                        let (da, db) = match kind {
                            Binary::Add => (gi, gi),
                            Binary::Sub => (gi, -gi),
                            Binary::Mul => (gi * tb.data()[ib], gi * ta.data()[ia]),
                        };
                        ga.data_mut()[ia] += da;
                        gb.data_mut()[ib] += db;
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.scale(*c)),
            Op::ScaleBy(a, s) => {
                let k = val(*s).item();
                let dot: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                accumulate(grads, *a, g.scale(k));
                accumulate(grads, *s, Tensor::scalar(dot));
            }
            Op::Unary(kind, a) => {
                let x = val(*a);
                let y = &node.value;
                let mut out = g.clone();
                for (k, o) in out.data_mut().iter_mut().enumerate() {
                    let (xi, yi) = (x.data()[k], y.data()[k]);
                    let local = match kind {
                        Unary::Relu => {
                            if xi > 0.0 {
                                1.0
                            } else {
                                0.0
                            }
                        }
                        Unary::Sigmoid => yi * (1.0 - yi),
                        Unary::Tanh => 1.0 - yi * yi,
                        Unary::Exp => yi,
                        Unary::Log => 1.0 / xi,
                        Unary::Elu => {
                            if xi > 0.0 {
                                1.0
                            } else {
                                yi + 1.0
                            }
                        }
                        Unary::LeakyRelu(slope) => {
                            if xi > 0.0 {
                                1.0
                            } else {
                                *slope
                            }
                        }
                    };
                    *o *= local;
                }
                accumulate(grads, *a, out);
            }
            Op::Softmax(a, axis) => {
                let y = &node.value;
                let mut out = Tensor::zeros(y.rows(), y.cols());
                let (lanes, len, ls, es) = Self::lanes(y.shape(), *axis);
                for l in 0..lanes {
                    let base = l * ls;
                    let dot: f64 = (0..len)
                        .map(|k| g.data()[base + k * es] * y.data()[base + k * es])
                        .sum();
                    for k in 0..len {
                        let idx = base + k * es;
                        out.data_mut()[idx] = y.data()[idx] * (g.data()[idx] - dot);
                    }
                }
                accumulate(grads, *a, out);
            }
            Op::LogSoftmax(a, axis) => {
                let y = &node.value;
                let mut out = Tensor::zeros(y.rows(), y.cols());
                let (lanes, len, ls, es) = Self::lanes(y.shape(), *axis);
                for l in 0..lanes {
                    let base = l * ls;
                    let total: f64 = (0..len).map(|k| g.data()[base + k * es]).sum();
                    for k in 0..len {
                        let idx = base + k * es;
                        out.data_mut()[idx] = g.data()[idx] - y.data()[idx].exp() * total;
                    }
                }
                accumulate(grads, *a, out);
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let [pr, pc] = val(p).shape();
                    let piece = match axis {
                        Axis::Rows => Tensor::new(
                            pr,
                            pc,
                            g.data()[offset * pc..(offset + pr) * pc].to_vec(),
                        ),
                        Axis::Cols => {
                            let mut d = Vec::with_capacity(pr * pc);
                            for r in 0..pr {
                                d.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                            }
                            Tensor::new(pr, pc, d)
                        }
                    }
                    .expect("concat slice shape");
                    offset += match axis {
                        Axis::Rows => pr,
                        Axis::Cols => pc,
                    };
                    accumulate(grads, p, piece);
                }
            }
            Op::Slice(a, axis, start) => {
                let x = val(*a);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                match axis {
                    Axis::Rows => {
                        let off = start * x.cols();
                        out.data_mut()[off..off + g.len()].copy_from_slice(g.data());
                    }
                    Axis::Cols => {
                        for r in 0..x.rows() {
                            let dst = &mut out.data_mut()[r * x.cols() + start..][..g.cols()];
                            dst.copy_from_slice(g.row_slice(r));
                        }
                    }
                }
                accumulate(grads, *a, out);
            }
            Op::Reduce(kind, parts, arg) => match kind {
                Reduce::Sum => {
                    for &p in parts {
                        accumulate(grads, p, g.clone());
                    }
                }
                Reduce::Mean => {
                    let inv = 1.0 / parts.len() as f64;
                    for &p in parts {
                        accumulate(grads, p, g.scale(inv));
                    }
                }
                Reduce::Max => {
                    for (k, &p) in parts.iter().enumerate() {
                        let mut out = g.clone();
                        for (o, &w) in out.data_mut().iter_mut().zip(arg) {
                            if w as usize != k {
                                *o = 0.0;
                            }
                        }
                        accumulate(grads, p, out);
                    }
                }
            },
            Op::SumAll(a) => {
                let [r, c] = val(*a).shape();
                accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::CrossEntropy {
                logits,
                mask,
                labels,
                probs,
            } => {
                let x = val(*logits);
                let c = x.cols();
                let scale = g.item() / mask.len() as f64;
                let mut out = Tensor::zeros(x.rows(), c);
                for (k, (&row, &label)) in mask.iter().zip(labels).enumerate() {
                    let dst = &mut out.data_mut()[row * c..(row + 1) * c];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let target = if j == label { 1.0 } else { 0.0 };
                        *d += scale * (probs[k * c + j] - target);
                    }
                }
                accumulate(grads, *logits, out);
            }
            Op::SpMM(a, h) => {
                let x = val(*h);
                let d = x.cols();
                let mut out = Tensor::zeros(x.rows(), d);
                for r in 0..a.n_rows() {
                    let gr = g.row_slice(r);
                    for (&c, &w) in a.row_indices(r).iter().zip(a.row_values(r)) {
                        let dst = &mut out.data_mut()[c * d..(c + 1) * d];
                        for (o, gv) in dst.iter_mut().zip(gr) {
                            *o += w * gv;
                        }
                    }
                }
                accumulate(grads, *h, out);
            }
            Op::Attention {
                z,
                src,
                dst,
                adj,
                slope,
                pre,
                coef,
            } => {
                let tz = val(*z);
                let n = adj.n_rows();
                let d = tz.cols();
                let mut gz = Tensor::zeros(n, d);
                let mut gs = Tensor::zeros(n, 1);
                let mut gd = Tensor::zeros(n, 1);
                for v in 0..n {
                    let range = adj.row_range(v);
                    if range.is_empty() {
                        continue;
                    }
                    let gv = g.row_slice(v);
                    let nbrs = adj.row_indices(v);
                    let dcoef: Vec<f64> = nbrs
                        .iter()
                        .map(|&u| tz.row_slice(u).iter().zip(gv).map(|(a, b)| a * b).sum())
                        .collect();
                    let a = &coef[range.clone()];
                    let mean: f64 = a.iter().zip(&dcoef).map(|(x, y)| x * y).sum();
                    for (k, &u) in nbrs.iter().enumerate() {
                        let dst_row = &mut gz.data_mut()[u * d..(u + 1) * d];
                        for (o, gvi) in dst_row.iter_mut().zip(gv) {
                            *o += a[k] * gvi;
                        }
                        let de = a[k] * (dcoef[k] - mean);
                        let p = pre[range.start + k];
                        let dp = if p > 0.0 { de } else { slope * de };
                        gs.data_mut()[u] += dp;
                        gd.data_mut()[v] += dp;
                    }
                }
                accumulate(grads, *z, gz);
                accumulate(grads, *src, gs);
                accumulate(grads, *dst, gd);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn matmul_gradient_of_sum() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let b = t.leaf(Tensor::column(&[1.0, 1.0])).unwrap();
        let p = t.matmul(a, b).unwrap();
        let s = t.sum_all(p).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(g.wrt(b).data(), &[4.0, 6.0]);
    }

    #[test]
    fn elementwise_examples() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::row(&[1.0, 2.0])).unwrap();
        let b = t.leaf(Tensor::row(&[3.0, 4.0])).unwrap();
        let s = t.add(a, b).unwrap();
        assert_eq!(t.value(s).data(), &[4.0, 6.0]);
        let x = t.leaf(Tensor::row(&[-1.0, 0.0, 2.0])).unwrap();
        let r = t.relu(x).unwrap();
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(0.0)).unwrap();
        let y = t.sigmoid(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 0.25);
    }

    #[test]
    fn log_rejects_nonpositive() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 0.0])).unwrap();
        assert!(matches!(t.log(x), Err(LlcError::Domain { .. })));
    }

    #[test]
    fn broadcast_rule() {
        let mut t = Tape::new();
        let m = t.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]])).unwrap();
        let row = t.leaf(Tensor::row(&[10.0, 20.0])).unwrap();
        let col = t.leaf(Tensor::column(&[1.0, 2.0])).unwrap();
        let a = t.add(m, row).unwrap();
        assert_eq!(t.value(a).data(), &[11.0, 22.0, 13.0, 24.0]);
        let b = t.mul(col, m).unwrap();
        assert_eq!(t.value(b).data(), &[1.0, 2.0, 6.0, 8.0]);
        let bad = t.leaf(Tensor::row(&[1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(t.add(m, bad), Err(LlcError::Shape { .. })));
        let scalar = t.leaf(Tensor::scalar(2.0)).unwrap();
        assert!(t.add(m, scalar).is_err());
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        for (input, want) in [
            (vec![0.0, 0.0], vec![0.5, 0.5]),
            (vec![1.0f64.ln(), 3.0f64.ln()], vec![0.25, 0.75]),
            (vec![1000.0, 1000.0], vec![0.5, 0.5]),
        ] {
            let x = t.leaf(Tensor::row(&input)).unwrap();
            let y = t.softmax(x, Axis::Cols).unwrap();
            close(t.value(y).data(), &want, 1e-12);
        }
    }

    #[test]
    fn concat_and_slice() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::row(&[1.0, 2.0])).unwrap();
        let b = t.leaf(Tensor::row(&[3.0, 4.0])).unwrap();
        let c = t.concat(&[a, b], Axis::Cols).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.concat(&[a], Axis::Cols).unwrap(), a);
        assert!(t.concat(&[], Axis::Cols).is_err());
        let s = t.sum_all(c).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(a).data(), &[1.0, 1.0]);
        assert_eq!(g.wrt(b).data(), &[1.0, 1.0]);
    }

    #[test]
    fn reduce_examples() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::row(&[1.0, 5.0])).unwrap();
        let b = t.leaf(Tensor::row(&[3.0, 2.0])).unwrap();
        let s = t.reduce(Reduce::Sum, &[a, b]).unwrap();
        assert_eq!(t.value(s).data(), &[4.0, 7.0]);
        let m = t.reduce(Reduce::Mean, &[a]).unwrap();
        assert_eq!(t.value(m).data(), &[1.0, 5.0]);
        let x = t.reduce(Reduce::Max, &[a, b]).unwrap();
        assert_eq!(t.value(x).data(), &[3.0, 5.0]);
        assert!(t.reduce(Reduce::Sum, &[]).is_err());
    }

    #[test]
    fn max_ties_go_to_first_input() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::row(&[2.0])).unwrap();
        let b = t.leaf(Tensor::row(&[2.0])).unwrap();
        let m = t.reduce(Reduce::Max, &[a, b]).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.wrt(a).item(), 1.0);
        assert_eq!(g.wrt(b).item(), 0.0);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let uniform = t.leaf(Tensor::zeros(2, 4)).unwrap();
        let l = t.cross_entropy(uniform, &[0, 3], &[0, 1]).unwrap();
        assert!((t.value(l).item() - 4f64.ln()).abs() < 1e-12);

        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 50.0] {
            let x = t.leaf(Tensor::row(&[margin, 0.0, 0.0])).unwrap();
            let l = t.cross_entropy(x, &[0], &[0]).unwrap();
            let v = t.value(l).item();
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-20);

        let two = t.leaf(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 0.0]])).unwrap();
        let only_second = t.cross_entropy(two, &[0, 1], &[1]).unwrap();
        assert!((t.value(only_second).item() - 2f64.ln()).abs() < 1e-12);
        assert!(t.cross_entropy(two, &[0, 1], &[]).is_err());
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::new();
        let w = t.leaf(Tensor::row(&[1.0, 2.0])).unwrap();
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum_all(sq).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[2.0, 4.0]);
        assert!(t.is_frozen());
        assert!(t.leaf(Tensor::scalar(1.0)).is_err());

        t.reset();
        let w = t.leaf(Tensor::row(&[1.0, 2.0])).unwrap();
        let c = t.leaf(Tensor::row(&[3.0, 4.0])).unwrap();
        let loss = t.sum_all(c).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.wrt(w).data(), &[0.0, 0.0]);

        t.reset();
        let w = t.leaf(Tensor::row(&[1.0, 2.0])).unwrap();
        assert!(matches!(t.backward(w), Err(LlcError::Argument(_))));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let adj = Arc::new(Csr::from_rows(
            3,
            &[
                vec![(0, 1.0), (1, 1.0)],
                vec![(0, 1.0), (1, 1.0), (2, 1.0)],
                vec![(1, 1.0), (2, 1.0)],
            ],
        ));
        let mut t = Tape::new();
        let z = t.leaf(Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]])).unwrap();
        let s = t.leaf(Tensor::column(&[0.3, -1.0, 2.0])).unwrap();
        let d = t.leaf(Tensor::column(&[0.1, 0.5, -0.2])).unwrap();
        let out = t.neighborhood_attention(&adj, z, s, d, 0.2).unwrap();
        let coef = t.attention_coefficients(out).unwrap();
        for v in 0..3 {
            let total: f64 = coef[adj.row_range(v)].iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
