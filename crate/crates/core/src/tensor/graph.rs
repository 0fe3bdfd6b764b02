use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use indexmap::IndexMap;

use super::{matmul_at_raw, matmul_bt_raw, matmul_raw, Result, Tensor, TensorError};
use crate::scalar::Scalar;

/// An operation whose forward value is computed outside the tape.
///
/// `backward` receives the upstream gradient, the input values and the
/// output value, and returns one gradient per input (`None` for inputs that
/// need none).
pub trait CustomOp<S: Scalar> {
    fn name(&self) -> &str;

    fn backward(
        &self,
        grad: &Tensor<S>,
        inputs: &[Rc<Tensor<S>>],
        output: &Tensor<S>,
    ) -> Result<Vec<Option<Tensor<S>>>>;
}

enum Op<S: Scalar> {
    Leaf,
    Add,
    Sub,
    Mul,
    AddRow,
    ScaleRows,
    Scale(S),
    AddScalar,
    MatMul,
    MatMulBt,
    Relu,
    Exp,
    Log,
    Sum,
    MeanRows,
    LogSumExpRows,
    LogSoftmaxRows,
    SoftmaxRows,
    SegmentMax(Vec<usize>),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(Vec<usize>),
    Gather(Vec<Option<usize>>),
    Reshape,
    L2NormalizeRows { norms: Vec<S> },
    Bilinear,
    Custom(Box<dyn CustomOp<S>>),
}

impl<S: Scalar> Op<S> {
    fn name(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddRow => "add_row",
            Op::ScaleRows => "scale_rows",
            Op::Scale(_) => "scale",
            Op::AddScalar => "add_scalar",
            Op::MatMul => "matmul",
            Op::MatMulBt => "matmul_t",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Sum => "sum",
            Op::MeanRows => "mean_rows",
            Op::LogSumExpRows => "logsumexp_rows",
            Op::LogSoftmaxRows => "log_softmax_rows",
            Op::SoftmaxRows => "softmax_rows",
            Op::SegmentMax(_) => "segment_max",
            Op::ConcatCols(_) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::GatherRows(_) => "gather_rows",
            Op::Gather(_) => "gather",
            Op::Reshape => "reshape",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
            Op::Bilinear => "bilinear",
            Op::Custom(c) => c.name(),
        }
    }
}

struct Node<S: Scalar> {
    value: Rc<Tensor<S>>,
    op: Op<S>,
    inputs: Vec<usize>,
    requires_grad: bool,
}

/// Tape of recorded operations. Build one per forward pass.
pub struct Graph<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    params: RefCell<IndexMap<String, usize>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a value on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, S: Scalar> {
    graph: &'g Graph<S>,
    id: usize,
}

impl<S: Scalar> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar loss with respect to every node that requires one.
pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
    params: IndexMap<String, usize>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var<'_, S>) -> Option<&Tensor<S>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<S>> {
        self.params.get(name).and_then(|&id| self.grads[id].as_ref())
    }

    /// Parameter gradients in registration order.
    pub fn params(&self) -> impl Iterator<Item = (&str, Option<&Tensor<S>>)> {
        self.params
            .iter()
            .map(|(k, &id)| (k.as_str(), self.grads[id].as_ref()))
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(shape_err(op, s, &[])),
    }
}

fn softmax_row<S: Scalar>(row: &[S], out: &mut [S]) {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    let mut z = S::zero();
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

fn lse_row<S: Scalar>(row: &[S]) -> S {
    let m = row.iter().copied().fold(S::neg_infinity(), S::max);
    if m == S::neg_infinity() {
        return m;
    }
    m + row.iter().map(|&x| (x - m).exp()).sum::<S>().ln()
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(IndexMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, inputs: Vec<usize>) -> Result<Var<'_, S>> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite {
                op: op.name().to_string(),
            });
        }
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            inputs,
            requires_grad,
        });
        Ok(Var { graph: self, id })
    }

    /// A constant input; gradients do not flow into it.
    pub fn constant(&self, value: Tensor<S>) -> Result<Var<'_, S>> {
        self.push(value, Op::Leaf, vec![])
    }

    /// A trainable leaf registered under `name`.
    pub fn param(&self, name: &str, value: Tensor<S>) -> Result<Var<'_, S>> {
        if self.params.borrow().contains_key(name) {
            return Err(TensorError::DuplicateParam(name.to_string()));
        }
        let v = self.push(value, Op::Leaf, vec![])?;
        self.nodes.borrow_mut()[v.id].requires_grad = true;
        self.params.borrow_mut().insert(name.to_string(), v.id);
        Ok(v)
    }

    /// Records a custom op with precomputed `output`.
    pub fn custom(
        &self,
        inputs: &[Var<'_, S>],
        output: Tensor<S>,
        op: Box<dyn CustomOp<S>>,
    ) -> Result<Var<'_, S>> {
        self.push(output, Op::Custom(op), inputs.iter().map(|v| v.id).collect())
    }

    pub fn concat_cols(&self, parts: &[Var<'_, S>]) -> Result<Var<'_, S>> {
        let vals: Vec<_> = parts.iter().map(|v| v.value()).collect();
        let rows = vals.first().map_or(0, |v| v.rows());
        let mut widths = Vec::with_capacity(vals.len());
        for v in &vals {
            if v.shape().len() != 2 || v.rows() != rows {
                return Err(shape_err("concat_cols", vals[0].shape(), v.shape()));
            }
            widths.push(v.cols());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &vals {
                data.extend_from_slice(v.row(r));
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        self.push(out, Op::ConcatCols(widths), parts.iter().map(|v| v.id).collect())
    }

    pub fn concat_rows(&self, parts: &[Var<'_, S>]) -> Result<Var<'_, S>> {
        let vals: Vec<_> = parts.iter().map(|v| v.value()).collect();
        let cols = vals.first().map_or(0, |v| v.cols());
        let mut heights = Vec::with_capacity(vals.len());
        let mut data = Vec::new();
        for v in &vals {
            if v.shape().len() != 2 || v.cols() != cols {
                return Err(shape_err("concat_rows", vals[0].shape(), v.shape()));
            }
            heights.push(v.rows());
            data.extend_from_slice(v.data());
        }
        let total: usize = heights.iter().sum();
        let out = Tensor::new(vec![total, cols], data)?;
        self.push(out, Op::ConcatRows(heights), parts.iter().map(|v| v.id).collect())
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(TensorError::Detached);
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), S::one()));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let ins: Vec<Rc<Tensor<S>>> = node.inputs.iter().map(|&i| nodes[i].value.clone()).collect();
            let local = local_grads(&node.op, &g, &ins, &node.value)?;
            for (k, lg) in local.into_iter().enumerate() {
                let i = node.inputs[k];
                let Some(lg) = lg else { continue };
                if !nodes[i].requires_grad {
                    continue;
                }
                if lg.shape() != nodes[i].value.shape() {
                    return Err(shape_err("backward", lg.shape(), nodes[i].value.shape()));
                }
                match &mut grads[i] {
                    Some(acc) => acc.axpy(S::one(), &lg),
                    slot => *slot = Some(lg),
                }
            }
            // keep gradients of leaves only; intermediates are dropped
            if node.inputs.is_empty() {
                grads[id] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.borrow().clone(),
        })
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<S>> {
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> S {
        self.value().item()
    }

    fn unary(&self, out: Tensor<S>, op: Op<S>) -> Result<Var<'g, S>> {
        self.graph.push(out, op, vec![self.id])
    }

    fn binary(&self, other: Var<'g, S>, out: Tensor<S>, op: Op<S>) -> Result<Var<'g, S>> {
        self.graph.push(out, op, vec![self.id, other.id])
    }

    fn zip(&self, other: Var<'g, S>, op: &'static str, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(op, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    pub fn add(&self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let out = self.zip(other, "add", |x, y| x + y)?;
        self.binary(other, out, Op::Add)
    }

    pub fn sub(&self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let out = self.zip(other, "sub", |x, y| x - y)?;
        self.binary(other, out, Op::Sub)
    }

    pub fn mul(&self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let out = self.zip(other, "mul", |x, y| x * y)?;
        self.binary(other, out, Op::Mul)
    }

    /// `[r,c] + [c]`, broadcasting the vector over rows.
    pub fn add_row(&self, row: Var<'g, S>) -> Result<Var<'g, S>> {
        let (a, b) = (self.value(), row.value());
        let c = a.cols();
        if b.shape() != [c] {
            return Err(shape_err("add_row", a.shape(), b.shape()));
        }
        let mut out = (*a).clone();
        for chunk in out.data_mut().chunks_mut(c.max(1)) {
            for (o, &y) in chunk.iter_mut().zip(b.data()) {
                *o += y;
            }
        }
        self.binary(row, out, Op::AddRow)
    }

    /// `[r,c] * [r]`, scaling row `i` by `w[i]`.
    pub fn scale_rows(&self, w: Var<'g, S>) -> Result<Var<'g, S>> {
        let (a, b) = (self.value(), w.value());
        let (r, c) = (a.rows(), a.cols());
        if b.shape() != [r] {
            return Err(shape_err("scale_rows", a.shape(), b.shape()));
        }
        let mut out = (*a).clone();
        for (i, chunk) in out.data_mut().chunks_mut(c.max(1)).enumerate() {
            for o in chunk.iter_mut() {
                *o *= b.data()[i];
            }
        }
        self.binary(w, out, Op::ScaleRows)
    }

    pub fn scale(&self, k: S) -> Result<Var<'g, S>> {
        let out = self.value().map(|x| x * k);
        self.unary(out, Op::Scale(k))
    }

    pub fn neg(&self) -> Result<Var<'g, S>> {
        self.scale(-S::one())
    }

    pub fn add_scalar(&self, k: S) -> Result<Var<'g, S>> {
        let out = self.value().map(|x| x + k);
        self.unary(out, Op::AddScalar)
    }

    /// `[m,k] · [k,n]`
    pub fn matmul(&self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = require_matrix("matmul", &a)?;
        let (k2, n) = require_matrix("matmul", &b)?;
        if k != k2 {
            return Err(shape_err("matmul", a.shape(), b.shape()));
        }
        let out = Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))?;
        self.binary(other, out, Op::MatMul)
    }

    /// `[m,k] · [n,k]ᵀ`
    pub fn matmul_t(&self, other: Var<'g, S>) -> Result<Var<'g, S>> {
        let (a, b) = (self.value(), other.value());
        let (m, k) = require_matrix("matmul_t", &a)?;
        let (n, k2) = require_matrix("matmul_t", &b)?;
        if k != k2 {
            return Err(shape_err("matmul_t", a.shape(), b.shape()));
        }
        let out = Tensor::new(vec![m, n], matmul_bt_raw(a.data(), b.data(), m, k, n))?;
        self.binary(other, out, Op::MatMulBt)
    }

    pub fn relu(&self) -> Result<Var<'g, S>> {
        let out = self.value().map(|x| x.max(S::zero()));
        self.unary(out, Op::Relu)
    }

    pub fn exp(&self) -> Result<Var<'g, S>> {
        let out = self.value().map(|x| x.exp());
        self.unary(out, Op::Exp)
    }

    pub fn log(&self) -> Result<Var<'g, S>> {
        let out = self.value().map(|x| x.ln());
        self.unary(out, Op::Log)
    }

    pub fn sum(&self) -> Result<Var<'g, S>> {
        let out = Tensor::scalar(self.value().data().iter().copied().sum());
        self.unary(out, Op::Sum)
    }

    /// Column means of a matrix: `[r,c] → [c]`.
    pub fn mean_rows(&self) -> Result<Var<'g, S>> {
        let a = self.value();
        let (r, c) = require_matrix("mean_rows", &a)?;
        if r == 0 {
            return Err(shape_err("mean_rows", a.shape(), &[]));
        }
        let mut out = vec![S::zero(); c];
        for i in 0..r {
            for (o, &x) in out.iter_mut().zip(a.row(i)) {
                *o += x;
            }
        }
        let inv = S::one() / S::count(r);
        let out = Tensor::vector(out.into_iter().map(|x| x * inv).collect());
        self.unary(out, Op::MeanRows)
    }

    /// Log-sum-exp over the last axis: `[.., c] → [..]`.
    pub fn logsumexp_rows(&self) -> Result<Var<'g, S>> {
        let a = self.value();
        let shape = a.shape()[..a.shape().len().saturating_sub(1)].to_vec();
        let data = (0..a.rows()).map(|r| lse_row(a.row(r))).collect();
        let out = Tensor::new(shape, data)?;
        self.unary(out, Op::LogSumExpRows)
    }

    pub fn log_softmax_rows(&self) -> Result<Var<'g, S>> {
        let a = self.value();
        let mut out = (*a).clone();
        let c = a.cols().max(1);
        for (r, chunk) in out.data_mut().chunks_mut(c).enumerate() {
            let z = lse_row(a.row(r));
            for o in chunk.iter_mut() {
                *o -= z;
            }
        }
        self.unary(out, Op::LogSoftmaxRows)
    }

    pub fn softmax_rows(&self) -> Result<Var<'g, S>> {
        let a = self.value();
        let mut out = (*a).clone();
        let c = a.cols().max(1);
        for (r, chunk) in out.data_mut().chunks_mut(c).enumerate() {
            softmax_row(a.row(r), chunk);
        }
        self.unary(out, Op::SoftmaxRows)
    }

    /// Maximum over consecutive column blocks of `width`: `[r, k·width] → [r, k]`.
    /// Ties go to the first column.
    pub fn segment_max(&self, width: usize) -> Result<Var<'g, S>> {
        let a = self.value();
        let (r, c) = require_matrix("segment_max", &a)?;
        if width == 0 || c % width != 0 {
            return Err(shape_err("segment_max", a.shape(), &[width]));
        }
        let k = c / width;
        let mut data = Vec::with_capacity(r * k);
        let mut argmax = Vec::with_capacity(r * k);
        for i in 0..r {
            let row = a.row(i);
            for s in 0..k {
                let mut best = s * width;
                for j in s * width + 1..(s + 1) * width {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                data.push(row[best]);
                argmax.push(i * c + best);
            }
        }
        let out = Tensor::new(vec![r, k], data)?;
        self.unary(out, Op::SegmentMax(argmax))
    }

    /// Row-wise maximum: `[r,c] → [r]`.
    pub fn max_rows(&self) -> Result<Var<'g, S>> {
        let c = self.value().cols();
        let m = self.segment_max(c)?;
        let r = m.value().rows();
        m.reshape(&[r])
    }

    pub fn gather_rows(&self, idx: &[usize]) -> Result<Var<'g, S>> {
        let a = self.value();
        let (r, c) = require_matrix("gather_rows", &a)?;
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    len: r,
                });
            }
            data.extend_from_slice(a.row(i));
        }
        let out = Tensor::new(vec![idx.len(), c], data)?;
        self.unary(out, Op::GatherRows(idx.to_vec()))
    }

    /// Picks flat elements into a new tensor of `shape`; `None` yields 0.
    pub fn gather(&self, idx: &[Option<usize>], shape: &[usize]) -> Result<Var<'g, S>> {
        let a = self.value();
        let mut data = Vec::with_capacity(idx.len());
        for &i in idx {
            match i {
                Some(i) if i >= a.len() => {
                    return Err(TensorError::Index {
                        op: "gather",
                        index: i,
                        len: a.len(),
                    })
                }
                Some(i) => data.push(a.data()[i]),
                None => data.push(S::zero()),
            }
        }
        let out = Tensor::new(shape.to_vec(), data)?;
        self.unary(out, Op::Gather(idx.to_vec()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, S>> {
        let out = self.value().reshape(shape)?;
        self.unary(out, Op::Reshape)
    }

    /// Divides each row by its L2 norm (floored at `1e-12`).
    pub fn l2_normalize_rows(&self) -> Result<Var<'g, S>> {
        let a = self.value();
        let floor = S::lit(1e-12);
        let mut out = (*a).clone();
        let mut norms = Vec::with_capacity(a.rows());
        for (r, chunk) in out.data_mut().chunks_mut(a.cols().max(1)).enumerate() {
            let n = a.row(r).iter().map(|&x| x * x).sum::<S>().sqrt().max(floor);
            for o in chunk.iter_mut() {
                *o /= n;
            }
            norms.push(n);
        }
        self.unary(out, Op::L2NormalizeRows { norms })
    }

    /// `out[i,o] = Σ_ab p[i,a]·w[o,a,b]·q[i,b]` for `p,q: [N,r]`, `w: [O,r,r]`.
    pub fn bilinear(&self, q: Var<'g, S>, w: Var<'g, S>) -> Result<Var<'g, S>> {
        let (p, qv, wv) = (self.value(), q.value(), w.value());
        let (n, r) = require_matrix("bilinear", &p)?;
        if qv.shape() != p.shape() {
            return Err(shape_err("bilinear", p.shape(), qv.shape()));
        }
        let o = match wv.shape() {
            [o, a, b] if *a == r && *b == r => *o,
            s => return Err(shape_err("bilinear", p.shape(), s)),
        };
        let mut data = vec![S::zero(); n * o];
        for i in 0..n {
            // t[o,a] = Σ_b w[o,a,b] q[i,b]
            let t = matmul_bt_raw(wv.data(), qv.row(i), o * r, r, 1);
            let pi = p.row(i);
            for k in 0..o {
                let mut acc = S::zero();
                for a in 0..r {
                    acc += pi[a] * t[k * r + a];
                }
                data[i * o + k] = acc;
            }
        }
        let out = Tensor::new(vec![n, o], data)?;
        self.graph.push(out, Op::Bilinear, vec![self.id, q.id, w.id])
    }
}

fn local_grads<S: Scalar>(
    op: &Op<S>,
    g: &Tensor<S>,
    ins: &[Rc<Tensor<S>>],
    out: &Tensor<S>,
) -> Result<Vec<Option<Tensor<S>>>> {
    let same = |data: Vec<S>, like: &Tensor<S>| Tensor::new(like.shape().to_vec(), data);
    let gz = |f: &dyn Fn(usize) -> S, like: &Tensor<S>| same((0..like.len()).map(f).collect(), like);
    Ok(match op {
        Op::Leaf => vec![],
        Op::Add => vec![Some(g.clone()), Some(g.clone())],
        Op::Sub => vec![Some(g.clone()), Some(g.map(|x| -x))],
        Op::Mul => {
            let (a, b) = (&ins[0], &ins[1]);
            vec![
                Some(gz(&|i| g.data()[i] * b.data()[i], a)?),
                Some(gz(&|i| g.data()[i] * a.data()[i], b)?),
            ]
        }
        Op::AddRow => {
            let c = ins[1].len();
            let mut db = vec![S::zero(); c];
            for chunk in g.data().chunks(c.max(1)) {
                for (d, &x) in db.iter_mut().zip(chunk) {
                    *d += x;
                }
            }
            vec![Some(g.clone()), Some(Tensor::vector(db))]
        }
        Op::ScaleRows => {
            let (a, w) = (&ins[0], &ins[1]);
            let c = a.cols().max(1);
            let da = gz(&|i| g.data()[i] * w.data()[i / c], a)?;
            let dw = (0..w.len())
                .map(|r| (0..c).map(|j| g.data()[r * c + j] * a.data()[r * c + j]).sum())
                .collect();
            vec![Some(da), Some(Tensor::vector(dw))]
        }
        Op::Scale(k) => vec![Some(g.map(|x| x * *k))],
        Op::AddScalar | Op::Reshape => vec![Some(g.reshape(ins[0].shape())?)],
        Op::MatMul => {
            let (a, b) = (&ins[0], &ins[1]);
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            vec![
                Some(same(matmul_bt_raw(g.data(), b.data(), m, n, k), a)?),
                Some(same(matmul_at_raw(a.data(), g.data(), m, k, n), b)?),
            ]
        }
        Op::MatMulBt => {
            let (a, b) = (&ins[0], &ins[1]);
            let (m, k, n) = (a.rows(), a.cols(), b.rows());
            vec![
                Some(same(matmul_raw(g.data(), b.data(), m, n, k), a)?),
                Some(same(matmul_at_raw(g.data(), a.data(), m, n, k), b)?),
            ]
        }
        Op::Relu => {
            let a = &ins[0];
            vec![Some(gz(
                &|i| if a.data()[i] > S::zero() { g.data()[i] } else { S::zero() },
                a,
            )?)]
        }
        Op::Exp => vec![Some(gz(&|i| g.data()[i] * out.data()[i], out)?)],
        Op::Log => vec![Some(gz(&|i| g.data()[i] / ins[0].data()[i], &ins[0])?)],
        Op::Sum => {
            let x = g.item();
            vec![Some(Tensor::full(ins[0].shape(), x))]
        }
        Op::MeanRows => {
            let a = &ins[0];
            let c = a.cols();
            let inv = S::one() / S::count(a.rows());
            vec![Some(gz(&|i| g.data()[i % c] * inv, a)?)]
        }
        Op::LogSumExpRows => {
            let a = &ins[0];
            let c = a.cols().max(1);
            let mut d = vec![S::zero(); a.len()];
            for r in 0..a.rows() {
                softmax_row(a.row(r), &mut d[r * c..(r + 1) * c]);
                for x in &mut d[r * c..(r + 1) * c] {
                    *x *= g.data()[r];
                }
            }
            vec![Some(same(d, a)?)]
        }
        Op::LogSoftmaxRows => {
            let c = out.cols().max(1);
            let mut d = g.data().to_vec();
            for (r, chunk) in d.chunks_mut(c).enumerate() {
                let gs: S = g.row(r).iter().copied().sum();
                for (j, x) in chunk.iter_mut().enumerate() {
                    *x -= out.row(r)[j].exp() * gs;
                }
            }
            vec![Some(same(d, out)?)]
        }
        Op::SoftmaxRows => {
            let c = out.cols().max(1);
            let mut d = vec![S::zero(); out.len()];
            for r in 0..out.rows() {
                let (y, gr) = (out.row(r), g.row(r));
                let dot: S = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..c {
                    d[r * c + j] = y[j] * (gr[j] - dot);
                }
            }
            vec![Some(same(d, out)?)]
        }
        Op::SegmentMax(argmax) => {
            let mut d = vec![S::zero(); ins[0].len()];
            for (k, &i) in argmax.iter().enumerate() {
                d[i] += g.data()[k];
            }
            vec![Some(same(d, &ins[0])?)]
        }
        Op::ConcatCols(widths) => {
            let total: usize = widths.iter().sum();
            let mut off = 0;
            let mut res = Vec::with_capacity(widths.len());
            for (k, &w) in widths.iter().enumerate() {
                let mut d = Vec::with_capacity(ins[k].len());
                for r in 0..ins[k].rows() {
                    d.extend_from_slice(&g.data()[r * total + off..r * total + off + w]);
                }
                res.push(Some(same(d, &ins[k])?));
                off += w;
            }
            res
        }
        Op::ConcatRows(heights) => {
            let c = g.cols();
            let mut off = 0;
            let mut res = Vec::with_capacity(heights.len());
            for (k, &h) in heights.iter().enumerate() {
                res.push(Some(same(g.data()[off * c..(off + h) * c].to_vec(), &ins[k])?));
                off += h;
            }
            res
        }
        Op::GatherRows(idx) => {
            let c = ins[0].cols();
            let mut d = vec![S::zero(); ins[0].len()];
            for (k, &i) in idx.iter().enumerate() {
                for j in 0..c {
                    d[i * c + j] += g.data()[k * c + j];
                }
            }
            vec![Some(same(d, &ins[0])?)]
        }
        Op::Gather(idx) => {
            let mut d = vec![S::zero(); ins[0].len()];
            for (k, i) in idx.iter().enumerate() {
                if let Some(i) = i {
                    d[*i] += g.data()[k];
                }
            }
            vec![Some(same(d, &ins[0])?)]
        }
        Op::L2NormalizeRows { norms } => {
            let a = &ins[0];
            let c = a.cols().max(1);
            let floor = S::lit(1e-12);
            let mut d = vec![S::zero(); a.len()];
            for (r, &nrm) in norms.iter().enumerate() {
                let (y, gr) = (out.row(r), g.row(r));
                // at the floor the map is linear
                let dot = if nrm > floor {
                    y.iter().zip(gr).map(|(&a, &b)| a * b).sum()
                } else {
                    S::zero()
                };
                for j in 0..c {
                    d[r * c + j] = (gr[j] - y[j] * dot) / nrm;
                }
            }
            vec![Some(same(d, a)?)]
        }
        Op::Bilinear => {
            let (p, q, w) = (&ins[0], &ins[1], &ins[2]);
            let (n, r) = (p.rows(), p.cols());
            let o = w.shape()[0];
            let (mut dp, mut dq, mut dw) = (
                vec![S::zero(); p.len()],
                vec![S::zero(); q.len()],
                vec![S::zero(); w.len()],
            );
            for i in 0..n {
                let (pi, qi) = (p.row(i), q.row(i));
                for k in 0..o {
                    let gk = g.data()[i * o + k];
                    if gk == S::zero() {
                        continue;
                    }
                    let wk = &w.data()[k * r * r..(k + 1) * r * r];
                    let dwk = &mut dw[k * r * r..(k + 1) * r * r];
                    for a in 0..r {
                        let mut wq = S::zero();
                        for b in 0..r {
                            let wab = wk[a * r + b];
                            wq += wab * qi[b];
                            dq[i * r + b] += gk * pi[a] * wab;
                            dwk[a * r + b] += gk * pi[a] * qi[b];
                        }
                        dp[i * r + a] += gk * wq;
                    }
                }
            }
            vec![
                Some(same(dp, p)?),
                Some(same(dq, q)?),
                Some(same(dw, w)?),
            ]
        }
        Op::Custom(c) => c.backward(g, ins, out)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Central-difference check of `f` with respect to every input entry.
    fn check(inputs: Vec<Tensor<f64>>, f: impl for<'g> Fn(&[Var<'g, f64>]) -> Result<Var<'g, f64>>) {
        let run = |vals: &[Tensor<f64>]| -> (f64, Vec<Tensor<f64>>) {
            let g = Graph::new();
            let vars: Vec<_> = vals
                .iter()
                .enumerate()
                .map(|(i, t)| g.param(&format!("x{i}"), t.clone()).unwrap())
                .collect();
            let loss = f(&vars).unwrap();
            let grads = g.backward(loss).unwrap();
            let gs = vars
                .iter()
                .map(|v| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(&v.shape())))
                .collect();
            (loss.item(), gs)
        };
        let (_, analytic) = run(&inputs);
        let eps = 1e-6;
        for (k, t) in inputs.iter().enumerate() {
            for i in 0..t.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += eps;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= eps;
                let fd = (run(&plus).0 - run(&minus).0) / (2.0 * eps);
                let an = analytic[k].data()[i];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "input {k} entry {i}: fd {fd} analytic {an}"
                );
            }
        }
    }

    /// Weighted sum so that every output entry receives a distinct gradient.
    fn probe<'g>(v: Var<'g, f64>) -> Result<Var<'g, f64>> {
        let shape = v.shape();
        let n: usize = shape.iter().product();
        let w = Tensor::new(shape, (0..n).map(|i| 0.3 + 0.17 * i as f64).collect()).unwrap();
        v.mul(v.graph().constant(w)?)?.sum()
    }

    #[test]
    fn elementwise_and_matmul_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b, c) = (rand_tensor(&mut rng, &[3, 4]), rand_tensor(&mut rng, &[4, 2]), rand_tensor(&mut rng, &[5, 4]));
        check(vec![a.clone(), b], |x| probe(x[0].matmul(x[1])?.relu()?.add_scalar(0.1)?.log()?));
        check(vec![a.clone(), c], |x| probe(x[0].matmul_t(x[1])?.exp()?));
        check(vec![a.clone(), a.map(|x| x * 0.5)], |x| probe(x[0].mul(x[1])?.sub(x[0])?.scale(2.0)?));
    }

    #[test]
    fn row_op_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, &[3, 5]);
        let r = rand_tensor(&mut rng, &[5]);
        let w = rand_tensor(&mut rng, &[3]);
        check(vec![a.clone(), r], |x| probe(x[0].add_row(x[1])?.log_softmax_rows()?));
        check(vec![a.clone(), w], |x| probe(x[0].scale_rows(x[1])?.softmax_rows()?));
        check(vec![a.clone()], |x| probe(x[0].logsumexp_rows()?));
        check(vec![a.clone()], |x| probe(x[0].mean_rows()?));
        check(vec![a.clone()], |x| probe(x[0].l2_normalize_rows()?));
        check(vec![a.clone()], |x| probe(x[0].segment_max(5)?));
        check(vec![a], |x| probe(x[0].max_rows()?));
    }

    #[test]
    fn structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_tensor(&mut rng, &[3, 2]);
        let b = rand_tensor(&mut rng, &[3, 4]);
        let c = rand_tensor(&mut rng, &[2, 2]);
        check(vec![a.clone(), b], |x| probe(x[0].graph().concat_cols(&[x[0], x[1], x[0]])?));
        check(vec![a.clone(), c], |x| probe(x[0].graph().concat_rows(&[x[1], x[0]])?));
        check(vec![a.clone()], |x| probe(x[0].gather_rows(&[2, 0, 2, 1])?));
        check(vec![a], |x| {
            probe(x[0].gather(&[Some(5), None, Some(0), Some(5)], &[2, 2])?.reshape(&[4])?)
        });
    }

    #[test]
    fn bilinear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = rand_tensor(&mut rng, &[4, 3]);
        let q = rand_tensor(&mut rng, &[4, 3]);
        let w = rand_tensor(&mut rng, &[2, 3, 3]);
        // forward against a direct triple loop
        let g = Graph::new();
        let out = g
            .constant(p.clone())
            .unwrap()
            .bilinear(g.constant(q.clone()).unwrap(), g.constant(w.clone()).unwrap())
            .unwrap()
            .value();
        for i in 0..4 {
            for o in 0..2 {
                let mut want = 0.0;
                for a in 0..3 {
                    for b in 0..3 {
                        want += p.at(i, a) * w.data()[o * 9 + a * 3 + b] * q.at(i, b);
                    }
                }
                assert!((out.at(i, o) - want).abs() < 1e-12);
            }
        }
        check(vec![p, q, w], |x| probe(x[0].bilinear(x[1], x[2])?));
    }

    #[test]
    fn errors() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 2])).unwrap();
        assert!(matches!(a.matmul(b), Err(TensorError::Shape { .. })));
        assert!(matches!(a.add_scalar(-1.0).unwrap().log(), Err(TensorError::NonFinite { .. })));
        assert!(matches!(g.backward(a.sum().unwrap()), Err(TensorError::Detached)));
        let p = g.param("p", Tensor::zeros(&[2])).unwrap();
        assert!(matches!(g.backward(p), Err(TensorError::NotScalar(_))));
        assert!(matches!(g.param("p", Tensor::zeros(&[1])), Err(TensorError::DuplicateParam(_))));
        assert!(matches!(a.gather_rows(&[2]), Err(TensorError::Index { .. })));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let g = Graph::<f64>::new();
        let x = g.param("x", Tensor::scalar(3.0)).unwrap();
        let y = x.mul(x).unwrap().add(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.param("x").unwrap().item(), 7.0);
    }
}
