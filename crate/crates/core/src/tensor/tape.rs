//! Recorded computation and reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and what is
//! needed to run it backwards. Node ids grow monotonically, so reverse id
//! order is a valid topological order for the backward sweep.

use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;

use rand::Rng;

use super::{sigmoid, softmax_rows, softplus, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::graph::{Edge, NodeId};

/// Message lists for neighbour aggregation: row `v` holds the nodes whose
/// state is averaged into `v`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Csr {
    offsets: Vec<usize>,
    indices: Vec<usize>,
}

impl Csr {
    /// Builds message lists from an edge list. Undirected edges send a
    /// message both ways; repeated edges collapse to one message.
    pub fn from_edges(num_nodes: usize, edges: &[Edge], directed: bool) -> Result<Self> {
        let mut lists: Vec<Vec<NodeId>> = vec![Vec::new(); num_nodes];
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::NodeOutOfRange {
                    node: a.max(b),
                    num_nodes,
                });
            }
            lists[b].push(a);
            if !directed && a != b {
                lists[a].push(b);
            }
        }
        let mut offsets = Vec::with_capacity(num_nodes + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            indices.extend(l);
            offsets.push(indices.len());
        }
        Ok(Self { offsets, indices })
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, v: usize) -> &[usize] {
        &self.indices[self.offsets[v]..self.offsets[v + 1]]
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    ConcatCols(usize, usize),
    Gather(usize, Vec<usize>),
    SegmentMean(usize, Csr),
    Relu(usize),
    Sigmoid(usize),
    Dropout(usize, Vec<f64>),
    RowNormalize(usize, f64),
    PairDot(usize, usize, Vec<(usize, usize)>),
    Reshape(usize),
    Sum(usize),
    SoftmaxCe(usize, Vec<usize>, Tensor),
    BceLogits(usize, Vec<f64>),
    L2(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
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

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    /// Records every parameter of `store` as a differentiable leaf.
    pub fn bind(&self, store: &ParamStore) -> Bound<'_> {
        let vars = store
            .iter()
            .map(|(name, p)| (name.to_string(), self.param(p.value.clone())))
            .collect();
        Bound { vars }
    }

    fn push(&self, op_name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op_name));
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse sweep from a scalar `loss`. Gradients from several paths into
    /// the same node are summed.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Backward("loss belongs to a different tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be a scalar, got shape {:?}",
                root.value.shape()
            )));
        }
        if !root.requires_grad {
            return Err(Error::Backward(
                "loss does not depend on any differentiable input".into(),
            ));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor {
            shape: root.value.shape.clone(),
            data: vec![1.0],
        });

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let mut send = |input: usize, gi: Tensor| {
                if nodes[input].requires_grad {
                    match &mut grads[input] {
                        Some(acc) => acc.add_assign(&gi),
                        slot => *slot = Some(gi),
                    }
                }
            };
            let val = |i: usize| &nodes[i].value;
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ga, gb) = matmul_backward(val(*a), val(*b), &g);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::AddRow(a, b) => {
                    let m = val(*b).len();
                    let mut gb = vec![0.0; m];
                    for row in g.data.chunks(m) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    send(*a, g.clone());
                    send(*b, Tensor::vector(gb));
                }
                Op::Scale(a, c) => send(*a, g.map(|v| v * c)),
                Op::ConcatCols(a, b) => {
                    let (p, q) = (val(*a).cols(), val(*b).cols());
                    let mut ga = Vec::with_capacity(val(*a).len());
                    let mut gb = Vec::with_capacity(val(*b).len());
                    for row in g.data.chunks(p + q) {
                        ga.extend_from_slice(&row[..p]);
                        gb.extend_from_slice(&row[p..]);
                    }
                    send(*a, Tensor { shape: val(*a).shape.clone(), data: ga });
                    send(*b, Tensor { shape: val(*b).shape.clone(), data: gb });
                }
                Op::Gather(a, idx) => {
                    let src = val(*a);
                    let c = src.cols();
                    let mut ga = Tensor::zeros(&src.shape);
                    for (r, &i) in idx.iter().enumerate() {
                        let dst = &mut ga.data[i * c..(i + 1) * c];
                        for (d, v) in dst.iter_mut().zip(&g.data[r * c..(r + 1) * c]) {
                            *d += v;
                        }
                    }
                    send(*a, ga);
                }
                Op::SegmentMean(a, csr) => {
                    let src = val(*a);
                    let c = src.cols();
                    let mut ga = Tensor::zeros(&src.shape);
                    for v in 0..csr.num_rows() {
                        let nb = csr.row(v);
                        if nb.is_empty() {
                            continue;
                        }
                        let w = 1.0 / nb.len() as f64;
                        let gv = &g.data[v * c..(v + 1) * c];
                        for &u in nb {
                            for (d, x) in ga.data[u * c..(u + 1) * c].iter_mut().zip(gv) {
                                *d += w * x;
                            }
                        }
                    }
                    send(*a, ga);
                }
                Op::Relu(a) => {
                    let out = &node.value;
                    let data = g
                        .data
                        .iter()
                        .zip(&out.data)
                        .map(|(gv, y)| if *y > 0.0 { *gv } else { 0.0 })
                        .collect();
                    send(*a, Tensor { shape: g.shape.clone(), data });
                }
                Op::Sigmoid(a) => {
                    let out = &node.value;
                    let data = g
                        .data
                        .iter()
                        .zip(&out.data)
                        .map(|(gv, s)| gv * s * (1.0 - s))
                        .collect();
                    send(*a, Tensor { shape: g.shape.clone(), data });
                }
                Op::Dropout(a, mask) => {
                    let data = g.data.iter().zip(mask).map(|(gv, m)| gv * m).collect();
                    send(*a, Tensor { shape: g.shape.clone(), data });
                }
                Op::RowNormalize(a, eps) => {
                    let x = val(*a);
                    let c = x.cols();
                    let mut gx = Vec::with_capacity(x.len());
                    for (xr, gr) in x.data.chunks(c).zip(g.data.chunks(c)) {
                        let n = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                        if n == 0.0 {
                            gx.extend(gr.iter().map(|v| v / eps));
                            continue;
                        }
                        let d = n + eps;
                        let xg: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        let k = xg / (n * d * d);
                        gx.extend(xr.iter().zip(gr).map(|(xv, gv)| gv / d - xv * k));
                    }
                    send(*a, Tensor { shape: x.shape.clone(), data: gx });
                }
                Op::PairDot(a, b, pairs) => {
                    let (xa, xb) = (val(*a), val(*b));
                    let c = xa.cols();
                    let mut ga = Tensor::zeros(&xa.shape);
                    let mut gb = Tensor::zeros(&xb.shape);
                    for (p, &(i, j)) in pairs.iter().enumerate() {
                        let gp = g.data[p];
                        if gp == 0.0 {
                            continue;
                        }
                        for k in 0..c {
                            ga.data[i * c + k] += gp * xb.data[j * c + k];
                            gb.data[j * c + k] += gp * xa.data[i * c + k];
                        }
                    }
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Reshape(a) => send(
                    *a,
                    Tensor {
                        shape: val(*a).shape.clone(),
                        data: g.data.clone(),
                    },
                ),
                Op::Sum(a) => {
                    let gv = g.data[0];
                    send(*a, val(*a).map(|_| gv));
                }
                Op::SoftmaxCe(a, targets, probs) => {
                    let gv = g.data[0];
                    let mut d = probs.clone();
                    let c = d.cols();
                    for (r, &t) in targets.iter().enumerate() {
                        d.data[r * c + t] -= 1.0;
                    }
                    for v in d.data.iter_mut() {
                        *v *= gv;
                    }
                    send(*a, d);
                }
                Op::BceLogits(a, labels) => {
                    let gv = g.data[0];
                    let x = val(*a);
                    let data = x
                        .data
                        .iter()
                        .zip(labels)
                        .map(|(&l, &y)| gv * (sigmoid(l) - y))
                        .collect();
                    send(*a, Tensor { shape: x.shape.clone(), data });
                }
                Op::L2(a, b) => {
                    let gv = g.data[0];
                    let (xa, xb) = (val(*a), val(*b));
                    let d: Vec<f64> = xa.data.iter().zip(&xb.data).map(|(p, q)| 2.0 * gv * (p - q)).collect();
                    send(*b, Tensor { shape: xb.shape.clone(), data: d.iter().map(|v| -v).collect() });
                    send(*a, Tensor { shape: xa.shape.clone(), data: d });
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn matmul_backward(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut ga = vec![0.0; n * k];
    for i in 0..n {
        let gi = &g.data[i * m..(i + 1) * m];
        for p in 0..k {
            let bp = &b.data[p * m..(p + 1) * m];
            ga[i * k + p] = gi.iter().zip(bp).map(|(x, y)| x * y).sum();
        }
    }
    let mut gb = vec![0.0; k * m];
    for i in 0..n {
        let gi = &g.data[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (acc, x) in gb[p * m..(p + 1) * m].iter_mut().zip(gi) {
                *acc += aip * x;
            }
        }
    }
    (
        Tensor { shape: a.shape.clone(), data: ga },
        Tensor { shape: b.shape.clone(), data: gb },
    )
}

fn matrix_dims(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    if t.shape.len() != 2 {
        return Err(Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape)));
    }
    Ok((t.shape[0], t.shape[1]))
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape.clone()
    }

    pub fn item(&self) -> f64 {
        self.value().data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Same value, cut off from the recorded history.
    pub fn detach(&self) -> Var<'t> {
        let v = self.value().clone();
        self.tape.constant(v)
    }

    fn same_tape(&self, other: &Var<'t>, op: &'static str) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::shape(op, "operands recorded on different tapes"))
        }
    }

    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other, "matmul")?;
        let out = {
            let (a, b) = (self.value(), other.value());
            let (n, k) = matrix_dims("matmul", &a)?;
            let (k2, m) = matrix_dims("matmul", &b)?;
            if k != k2 {
                return Err(Error::shape("matmul", format!("[{n}, {k}] x [{k2}, {m}]")));
            }
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                let row = &mut out[i * m..(i + 1) * m];
                for p in 0..k {
                    let aip = a.data[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for (o, x) in row.iter_mut().zip(&b.data[p * m..(p + 1) * m]) {
                        *o += aip * x;
                    }
                }
            }
            Tensor { shape: vec![n, m], data: out }
        };
        self.tape.push("matmul", out, Op::MatMul(self.id, other.id), &[self.id, other.id])
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other, "add")?;
        let out = {
            let (a, b) = (self.value(), other.value());
            if a.shape != b.shape {
                return Err(Error::shape("add", format!("{:?} + {:?}", a.shape, b.shape)));
            }
            Tensor {
                shape: a.shape.clone(),
                data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
            }
        };
        self.tape.push("add", out, Op::Add(self.id, other.id), &[self.id, other.id])
    }

    /// Adds the vector `bias` to every row of this matrix.
    pub fn add_row(&self, bias: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(bias, "add_row")?;
        let out = {
            let (a, b) = (self.value(), bias.value());
            let (_, m) = matrix_dims("add_row", &a)?;
            if b.len() != m {
                return Err(Error::shape("add_row", format!("{:?} + {:?}", a.shape, b.shape)));
            }
            let mut data = a.data.clone();
            for row in data.chunks_mut(m) {
                for (x, y) in row.iter_mut().zip(&b.data) {
                    *x += y;
                }
            }
            Tensor { shape: a.shape.clone(), data }
        };
        self.tape.push("add_row", out, Op::AddRow(self.id, bias.id), &[self.id, bias.id])
    }

    pub fn scale(&self, c: f64) -> Result<Var<'t>> {
        let out = self.value().map(|v| v * c);
        self.tape.push("scale", out, Op::Scale(self.id, c), &[self.id])
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn concat_cols(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other, "concat")?;
        let out = {
            let (a, b) = (self.value(), other.value());
            let (n, p) = matrix_dims("concat", &a)?;
            let (n2, q) = matrix_dims("concat", &b)?;
            if n != n2 {
                return Err(Error::shape("concat", format!("{:?} | {:?}", a.shape, b.shape)));
            }
            let mut data = Vec::with_capacity(n * (p + q));
            for i in 0..n {
                data.extend_from_slice(&a.data[i * p..(i + 1) * p]);
                data.extend_from_slice(&b.data[i * q..(i + 1) * q]);
            }
            Tensor { shape: vec![n, p + q], data }
        };
        self.tape.push("concat", out, Op::ConcatCols(self.id, other.id), &[self.id, other.id])
    }

    /// Rows `idx` of this matrix, in order (repeats allowed).
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let (n, c) = matrix_dims("gather", &a)?;
            let mut data = Vec::with_capacity(idx.len() * c);
            for &i in idx {
                if i >= n {
                    return Err(Error::shape("gather", format!("row {i} of {n}")));
                }
                data.extend_from_slice(&a.data[i * c..(i + 1) * c]);
            }
            Tensor { shape: vec![idx.len(), c], data }
        };
        self.tape.push("gather", out, Op::Gather(self.id, idx.to_vec()), &[self.id])
    }

    /// Mean over each row's message list; rows without messages get zeros.
    ///
    /// The per-column sums run over the values in sorted order, so the result
    /// does not depend on how neighbours happen to be numbered.
    pub fn segment_mean(&self, csr: &Csr) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let (n, c) = matrix_dims("segment_mean", &a)?;
            if csr.num_rows() != n || csr.indices.iter().any(|&u| u >= n) {
                return Err(Error::shape(
                    "segment_mean",
                    format!("{} message rows for {n} nodes", csr.num_rows()),
                ));
            }
            let mut data = vec![0.0; n * c];
            let mut buf = Vec::new();
            for v in 0..n {
                let nb = csr.row(v);
                if nb.is_empty() {
                    continue;
                }
                let inv = 1.0 / nb.len() as f64;
                for j in 0..c {
                    let s = if nb.len() <= 2 {
                        nb.iter().map(|&u| a.data[u * c + j]).sum::<f64>()
                    } else {
                        buf.clear();
                        buf.extend(nb.iter().map(|&u| a.data[u * c + j]));
                        buf.sort_unstable_by(f64::total_cmp);
                        buf.iter().sum::<f64>()
                    };
                    data[v * c + j] = s * inv;
                }
            }
            Tensor { shape: vec![n, c], data }
        };
        self.tape.push("segment_mean", out, Op::SegmentMean(self.id, csr.clone()), &[self.id])
    }

    pub fn relu(&self) -> Result<Var<'t>> {
        let out = self.value().map(|v| v.max(0.0));
        self.tape.push("relu", out, Op::Relu(self.id), &[self.id])
    }

    pub fn sigmoid(&self) -> Result<Var<'t>> {
        let out = self.value().map(sigmoid);
        self.tape.push("sigmoid", out, Op::Sigmoid(self.id), &[self.id])
    }

    /// Inverted dropout: each element is zeroed with probability `p` and the
    /// survivors are scaled by `1 / (1 - p)`. `p == 0` is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout p = {p}")));
        }
        if p == 0.0 {
            return Ok(*self);
        }
        let keep = 1.0 / (1.0 - p);
        let (out, mask) = {
            let a = self.value();
            let mask: Vec<f64> = (0..a.len())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
                .collect();
            let data = a.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
            (Tensor { shape: a.shape.clone(), data }, mask)
        };
        self.tape.push("dropout", out, Op::Dropout(self.id, mask), &[self.id])
    }

    /// Divides each row by `||row|| + eps`; an all-zero row stays zero.
    pub fn row_normalize(&self, eps: f64) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            let (_, c) = matrix_dims("row_normalize", &a)?;
            let mut data = a.data.clone();
            for row in data.chunks_mut(c.max(1)) {
                let d = row.iter().map(|v| v * v).sum::<f64>().sqrt() + eps;
                for v in row.iter_mut() {
                    *v /= d;
                }
            }
            Tensor { shape: a.shape.clone(), data }
        };
        self.tape.push("row_normalize", out, Op::RowNormalize(self.id, eps), &[self.id])
    }

    /// `out[p] = self[i_p] . other[j_p]` for each index pair.
    pub fn pair_dot(&self, other: &Var<'t>, pairs: &[(usize, usize)]) -> Result<Var<'t>> {
        self.same_tape(other, "pair_dot")?;
        let out = {
            let (a, b) = (self.value(), other.value());
            let (na, c) = matrix_dims("pair_dot", &a)?;
            let (nb, c2) = matrix_dims("pair_dot", &b)?;
            if c != c2 {
                return Err(Error::shape("pair_dot", format!("{:?} . {:?}", a.shape, b.shape)));
            }
            let mut data = Vec::with_capacity(pairs.len());
            for &(i, j) in pairs {
                if i >= na || j >= nb {
                    return Err(Error::shape("pair_dot", format!("pair ({i}, {j}) out of range")));
                }
                let (ra, rb) = (&a.data[i * c..(i + 1) * c], &b.data[j * c..(j + 1) * c]);
                data.push(ra.iter().zip(rb).map(|(x, y)| x * y).sum());
            }
            Tensor::vector(data)
        };
        self.tape.push(
            "pair_dot",
            out,
            Op::PairDot(self.id, other.id, pairs.to_vec()),
            &[self.id, other.id],
        )
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let out = self.value().clone().reshaped(shape)?;
        self.tape.push("reshape", out, Op::Reshape(self.id), &[self.id])
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let out = Tensor::scalar(self.value().sum());
        self.tape.push("sum", out, Op::Sum(self.id), &[self.id])
    }

    /// Summed cross-entropy of row-wise softmax against class `targets`.
    pub fn softmax_cross_entropy(&self, targets: &[usize]) -> Result<Var<'t>> {
        let (out, probs) = {
            let a = self.value();
            let (n, c) = matrix_dims("softmax_cross_entropy", &a)?;
            if targets.len() != n || targets.iter().any(|&t| t >= c) {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("{} targets for [{n}, {c}] logits", targets.len()),
                ));
            }
            let probs = softmax_rows(&a);
            let mut loss = 0.0;
            for (r, &t) in targets.iter().enumerate() {
                let row = a.row(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += lse - row[t];
            }
            (Tensor::scalar(loss), probs)
        };
        self.tape.push(
            "softmax_cross_entropy",
            out,
            Op::SoftmaxCe(self.id, targets.to_vec(), probs),
            &[self.id],
        )
    }

    /// Summed binary cross-entropy of `sigmoid(self)` against `labels` in [0, 1].
    pub fn bce_with_logits(&self, labels: &[f64]) -> Result<Var<'t>> {
        let out = {
            let a = self.value();
            if labels.len() != a.len() {
                return Err(Error::shape(
                    "bce_with_logits",
                    format!("{} labels for {} logits", labels.len(), a.len()),
                ));
            }
            let loss: f64 = a
                .data
                .iter()
                .zip(labels)
                .map(|(&x, &y)| softplus(x) - y * x)
                .sum();
            Tensor::scalar(loss)
        };
        self.tape
            .push("bce_with_logits", out, Op::BceLogits(self.id, labels.to_vec()), &[self.id])
    }

    /// `sum((self - other)^2)`.
    pub fn l2_loss(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other, "l2_loss")?;
        let out = {
            let (a, b) = (self.value(), other.value());
            if a.shape != b.shape {
                return Err(Error::shape("l2_loss", format!("{:?} vs {:?}", a.shape, b.shape)));
            }
            Tensor::scalar(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum())
        };
        self.tape.push("l2_loss", out, Op::L2(self.id, other.id), &[self.id, other.id])
    }
}

/// Parameter leaves recorded on a tape, by name.
#[derive(Clone, Debug)]
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("no parameter named {name:?}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var<'t>)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Result of a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced it.
    pub fn get(&self, v: &Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradients for every bound parameter; unreached parameters get zeros.
    pub fn named(&self, bound: &Bound<'_>) -> BTreeMap<String, Tensor> {
        bound
            .iter()
            .map(|(name, v)| {
                let g = self
                    .get(&v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(&v.shape()));
                (name.to_string(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check_gradients;
    use crate::rng::seeded;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let tape = Tape::new();
        let x = tape.param(m(2, 5, &[0.3; 10]));
        let loss = x.softmax_cross_entropy(&[0, 4]).unwrap();
        assert!((loss.item() - 2.0 * 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![0.0]));
        let loss = x.bce_with_logits(&[1.0]).unwrap();
        assert!((loss.item() - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn segment_mean_of_two_neighbours() {
        let tape = Tape::new();
        let x = tape.constant(m(3, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0]));
        let csr = Csr::from_edges(3, &[(0, 1), (0, 2)], false).unwrap();
        let y = x.segment_mean(&csr).unwrap();
        assert_eq!(y.value().row(0), &[0.5, 0.5]);
        assert_eq!(y.value().row(1), &[0.0, 0.0]);
    }

    #[test]
    fn isolated_rows_get_zero_aggregate() {
        let tape = Tape::new();
        let x = tape.constant(m(2, 2, &[3.0, 4.0, 5.0, 6.0]));
        let csr = Csr::from_edges(2, &[], false).unwrap();
        assert_eq!(x.segment_mean(&csr).unwrap().value().data(), &[0.0; 4]);
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let tape = Tape::new();
        let w = tape.param(m(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let x = tape.constant(m(1, 2, &[7.0, -1.0]));
        let loss = x.matmul(&w).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(&w).unwrap().data(), &[7.0, 7.0, 7.0, -1.0, -1.0, -1.0]);
        assert!(grads.get(&x).is_none());
    }

    #[test]
    fn log_softmax_gradient_is_p_minus_one() {
        let tape = Tape::new();
        let x = tape.param(m(1, 3, &[2.0, 1.0, 0.0]));
        let loss = x.softmax_cross_entropy(&[0]).unwrap();
        let g = tape.backward(loss).unwrap();
        let p = crate::tensor::softmax_rows(&x.value());
        let gx = g.get(&x).unwrap();
        assert!((gx.data()[0] - (p.data()[0] - 1.0)).abs() < 1e-15);
        assert!((gx.data()[1] - p.data()[1]).abs() < 1e-15);
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        let tape = Tape::new();
        let x = tape.param(Tensor::vector(vec![3.0]));
        let y = x.add(&x).unwrap().add(&x).unwrap().sum().unwrap();
        assert_eq!(tape.backward(y).unwrap().get(&x).unwrap().data(), &[3.0]);
    }

    #[test]
    fn backward_errors() {
        let tape = Tape::new();
        let c = tape.constant(Tensor::scalar(1.0));
        assert!(tape.backward(c).is_err());
        let v = tape.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(v).is_err());
        let other = Tape::new();
        let s = other.param(Tensor::scalar(1.0));
        assert!(tape.backward(s).is_err());
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_errors() {
        let tape = Tape::new();
        let a = tape.param(m(2, 3, &[0.0; 6]));
        let b = tape.param(m(2, 3, &[0.0; 6]));
        assert!(matches!(a.matmul(&b), Err(Error::Shape { .. })));
        let big = tape.param(Tensor::vector(vec![1e308, 1e308]));
        assert!(matches!(big.scale(10.0), Err(Error::NonFinite("scale"))));
    }

    #[test]
    fn parameters_untouched_by_backward() {
        let tape = Tape::new();
        let w = tape.param(m(1, 2, &[1.0, 2.0]));
        let loss = w.relu().unwrap().sum().unwrap();
        let before = w.value().clone();
        tape.backward(loss).unwrap();
        assert_eq!(*w.value(), before);
    }

    fn store(shapes: &[(&str, usize, usize)], seed: u64) -> ParamStore {
        let mut rng = seeded(seed);
        let mut s = ParamStore::new();
        for &(name, r, c) in shapes {
            let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            s.insert(name, Tensor::matrix(r, c, data).unwrap()).unwrap();
        }
        s
    }

    fn assert_grad_ok<F>(store: &ParamStore, f: F)
    where
        F: for<'t> Fn(&'t Tape, &Bound<'t>) -> Result<Var<'t>>,
    {
        let report = check_gradients(store, 1e-5, f).unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn finite_difference_every_op() {
        let s = store(&[("a", 4, 3), ("b", 3, 5), ("c", 4, 3), ("v", 1, 3), ("d", 4, 2)], 1);
        // matmul + add_row + sigmoid
        assert_grad_ok(&s, |_, b| {
            let v = b.get("v")?.reshape(vec![3])?;
            b.get("a")?.add_row(&v)?.matmul(&b.get("b")?)?.sigmoid()?.sum()
        });
        // add, scale, concat, relu
        assert_grad_ok(&s, |_, b| {
            let x = b.get("a")?.add(&b.get("c")?)?.scale(-1.7)?;
            x.concat_cols(&b.get("d")?)?.relu()?.l2_loss(&b.get("a")?.concat_cols(&b.get("d")?)?.scale(0.3)?)
        });
        // gather, segment mean, row normalise, pair dot
        let csr = Csr::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3), (1, 3)], false).unwrap();
        assert_grad_ok(&s, |_, b| {
            let h = b.get("a")?.segment_mean(&csr)?.add(&b.get("c")?)?;
            let g = h.gather_rows(&[3, 0, 0, 2])?;
            let u = g.row_normalize(1e-8)?;
            let w = b.get("c")?.row_normalize(1e-8)?;
            u.pair_dot(&w, &[(0, 1), (1, 1), (2, 3), (3, 0)])?.scale(2.0)?.sum()
        });
        // softmax cross-entropy, bce, reshape
        assert_grad_ok(&s, |_, b| {
            let ce = b.get("a")?.softmax_cross_entropy(&[0, 2, 1, 1])?;
            let flat = b.get("c")?.reshape(vec![12])?;
            let labels: Vec<f64> = (0..12).map(|i| (i % 2) as f64).collect();
            ce.add(&flat.bce_with_logits(&labels)?)
        });
        // dropout with a fixed mask stream
        assert_grad_ok(&s, |_, b| {
            let mut rng = seeded(4);
            b.get("a")?.dropout(0.3, &mut rng)?.matmul(&b.get("b")?)?.sum()
        });
    }

    #[test]
    fn pair_dot_with_itself() {
        let s = store(&[("x", 3, 2)], 2);
        assert_grad_ok(&s, |_, b| {
            let x = b.get("x")?;
            x.pair_dot(&x, &[(0, 1), (2, 2), (1, 0)])?.sum()
        });
    }
}
