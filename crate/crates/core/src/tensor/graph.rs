use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};

use super::array::Tensor;
use super::kernels;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU32 = AtomicU32::new(1);

fn fresh_graph_id() -> u32 {
    NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a node of one particular [`Graph`]. Handles from another graph,
/// or from a graph that has since been reset, are rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u32,
    index: u32,
}

/// Index of a trainable array inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable arrays in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    Param(ParamId),
    MatMul(usize, usize),
    MatVec(usize, usize),
    VecMat(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    OneMinus(usize),
    Sigmoid(usize),
    Tanh(usize),
    Sum(usize),
    Concat(Vec<usize>),
    Slice { input: usize, start: usize },
    Row(usize, usize),
    StackRows(Vec<usize>),
    Gather(usize, Vec<usize>),
    MaskedSoftmax(usize, Vec<bool>),
    IndexSum(usize, Vec<usize>),
    NegLog(usize, f64),
    MaskMul(usize, Vec<f64>),
    /// Inputs `[xr, xu, xh]`, state `h`, recurrent `[Hr, Hu, Hh]`; `gates`
    /// caches `r`, `u` and the candidate for the backward pass.
    GruCell {
        x: [usize; 3],
        h: usize,
        w: [usize; 3],
        gates: Vec<f64>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::MatVec(..) => "matvec",
            Op::VecMat(..) => "vecmat",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::OneMinus(_) => "one_minus",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Sum(_) => "sum",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Row(..) => "row",
            Op::StackRows(_) => "stack_rows",
            Op::Gather(..) => "gather",
            Op::MaskedSoftmax(..) => "masked_softmax",
            Op::IndexSum(..) => "index_sum",
            Op::NegLog(..) => "neg_log",
            Op::MaskMul(..) => "mask_mul",
            Op::GruCell { .. } => "gru_cell",
        }
    }
}

struct Node {
    op: Op,
    // Empty for `Op::Param`; the value lives in the bound store.
    value: Tensor,
    requires_grad: bool,
}

/// Define-by-run computation graph.
///
/// Every operation evaluates eagerly and records what its backward rule
/// needs. Trainable parameters are referenced from a borrowed
/// [`ParamStore`] rather than copied in, so binding a large embedding table
/// costs nothing.
pub struct Graph<'p> {
    id: u32,
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph {
            id: fresh_graph_id(),
            params: None,
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn with_params(params: &'p ParamStore) -> Self {
        Graph {
            params: Some(params),
            ..Graph::new()
        }
    }

    /// Drops all recorded nodes. Handles issued before the reset become
    /// invalid.
    pub fn reset(&mut self) {
        self.id = fresh_graph_id();
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index as usize >= self.nodes.len() {
            return Err(Error::Lifecycle(
                "handle does not belong to this graph (detached or reset)".into(),
            ));
        }
        Ok(v.index as usize)
    }

    fn val(&self, i: usize) -> &Tensor {
        let node = &self.nodes[i];
        match node.op {
            Op::Param(id) => self
                .params
                .expect("param node without a bound store")
                .get(id),
            _ => &node.value,
        }
    }

    pub fn value(&self, v: Var) -> Result<&Tensor> {
        Ok(self.val(self.index(v)?))
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(self.value(v)?.shape())
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(op.name().into()));
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var {
            graph: self.id,
            index: (self.nodes.len() - 1) as u32,
        })
    }

    fn rg(&self, i: usize) -> bool {
        self.nodes[i].requires_grad
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(Op::Constant, value, false)
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let store = self
            .params
            .ok_or_else(|| Error::Lifecycle("graph has no parameter store bound".into()))?;
        if id.0 >= store.len() {
            return Err(Error::Bounds {
                index: id.0,
                len: store.len(),
            });
        }
        if !store.get(id).is_finite() {
            return Err(Error::Numeric(format!("parameter {}", store.name(id))));
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: Tensor::zeros(&[0]),
            requires_grad: true,
        });
        Ok(Var {
            graph: self.id,
            index: (self.nodes.len() - 1) as u32,
        })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::dim("matmul", ta.shape(), tb.shape()));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(ta.data(), tb.data(), &mut out, m, k, n);
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::MatMul(ia, ib), Tensor::new(vec![m, n], out)?, rg)
    }

    /// Matrix `[m×k]` times vector `[k]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (ia, ix) = (self.index(a)?, self.index(x)?);
        let (ta, tx) = (self.val(ia), self.val(ix));
        if ta.rank() != 2 || tx.rank() != 1 || ta.shape()[1] != tx.len() {
            return Err(Error::dim("matvec", ta.shape(), tx.shape()));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let mut out = vec![0.0; m];
        kernels::matvec_acc(ta.data(), tx.data(), &mut out, m, k);
        let rg = self.rg(ia) || self.rg(ix);
        self.push(Op::MatVec(ia, ix), Tensor::vector(out), rg)
    }

    /// Weighted row sum: vector `[n]` times matrix `[n×k]`.
    pub fn vecmat(&mut self, w: Var, m: Var) -> Result<Var> {
        let (iw, im) = (self.index(w)?, self.index(m)?);
        let (tw, tm) = (self.val(iw), self.val(im));
        if tw.rank() != 1 || tm.rank() != 2 || tm.shape()[0] != tw.len() {
            return Err(Error::dim("vecmat", tw.shape(), tm.shape()));
        }
        let (n, k) = (tm.shape()[0], tm.shape()[1]);
        let mut out = vec![0.0; k];
        kernels::matvec_t_acc(tm.data(), tw.data(), &mut out, n, k);
        let rg = self.rg(iw) || self.rg(im);
        self.push(Op::VecMat(iw, im), Tensor::vector(out), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let ta = self.val(ia);
        if ta.rank() != 2 {
            return Err(Error::dim("transpose", ta.shape(), &[]));
        }
        let out = ta.transpose();
        let rg = self.rg(ia);
        self.push(Op::Transpose(ia), out, rg)
    }

    fn binary_shape(&self, op: &'static str, ia: usize, ib: usize) -> Result<Vec<usize>> {
        let (sa, sb) = (self.val(ia).shape(), self.val(ib).shape());
        if sa == sb || sb.is_empty() {
            Ok(sa.to_vec())
        } else if sa.is_empty() {
            Ok(sb.to_vec())
        } else {
            Err(Error::dim(op, sa, sb))
        }
    }

    fn zip_with(&self, ia: usize, ib: usize, shape: Vec<usize>, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.val(ia), self.val(ib));
        let n: usize = shape.iter().product();
        let da = ta.data();
        let db = tb.data();
        let data = (0..n)
            .map(|i| {
                let x = if da.len() == 1 { da[0] } else { da[i] };
                let y = if db.len() == 1 { db[0] } else { db[i] };
                f(x, y)
            })
            .collect();
        Tensor::new(shape, data).expect("shape computed from operands")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let shape = self.binary_shape("add", ia, ib)?;
        let out = self.zip_with(ia, ib, shape, |x, y| x + y);
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::Add(ia, ib), out, rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let shape = self.binary_shape("sub", ia, ib)?;
        let out = self.zip_with(ia, ib, shape, |x, y| x - y);
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::Sub(ia, ib), out, rg)
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let shape = self.binary_shape("mul", ia, ib)?;
        let out = self.zip_with(ia, ib, shape, |x, y| x * y);
        let rg = self.rg(ia) || self.rg(ib);
        self.push(Op::Mul(ia, ib), out, rg)
    }

    fn map(&mut self, a: Var, op: impl FnOnce(usize) -> Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ia = self.index(a)?;
        let ta = self.val(ia);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(ia);
        self.push(op(ia), out, rg)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        self.map(a, |i| Op::Scale(i, k), |x| k * x)
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::OneMinus, |x| 1.0 - x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid, kernels::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh, f64::tanh)
    }

    /// Fused bias-free GRU update from precomputed input projections:
    ///
    /// ```text
    /// r  = σ(xr + Hr h)
    /// u  = σ(xu + Hu h)
    /// h̄  = tanh(xh + Hh (r · h))
    /// h' = (1 - u) · h + u · h̄
    /// ```
    ///
    /// One node instead of a dozen; the encoder calls this once per token.
    pub fn gru_cell(&mut self, x: [Var; 3], h: Var, w: [Var; 3]) -> Result<Var> {
        let ix = [self.index(x[0])?, self.index(x[1])?, self.index(x[2])?];
        let iw = [self.index(w[0])?, self.index(w[1])?, self.index(w[2])?];
        let ih = self.index(h)?;
        let hv = self.val(ih);
        if hv.rank() != 1 {
            return Err(Error::dim("gru_cell", hv.shape(), &[]));
        }
        let n = hv.len();
        for &i in &ix {
            if self.val(i).shape() != [n] {
                return Err(Error::dim("gru_cell", self.val(i).shape(), hv.shape()));
            }
        }
        for &i in &iw {
            if self.val(i).shape() != [n, n] {
                return Err(Error::dim("gru_cell", self.val(i).shape(), &[n, n]));
            }
        }
        let hd = hv.data();
        let mut r = vec![0.0; n];
        kernels::matvec_acc(self.val(iw[0]).data(), hd, &mut r, n, n);
        let mut u = vec![0.0; n];
        kernels::matvec_acc(self.val(iw[1]).data(), hd, &mut u, n, n);
        let (xr, xu, xh) = (self.val(ix[0]).data(), self.val(ix[1]).data(), self.val(ix[2]).data());
        for i in 0..n {
            r[i] = kernels::sigmoid(xr[i] + r[i]);
            u[i] = kernels::sigmoid(xu[i] + u[i]);
        }
        let rh: Vec<f64> = r.iter().zip(hd).map(|(a, b)| a * b).collect();
        let mut c = vec![0.0; n];
        kernels::matvec_acc(self.val(iw[2]).data(), &rh, &mut c, n, n);
        let mut out = vec![0.0; n];
        for i in 0..n {
            c[i] = (xh[i] + c[i]).tanh();
            out[i] = (1.0 - u[i]) * hd[i] + u[i] * c[i];
        }
        let rg = ix.iter().chain(&iw).any(|&i| self.rg(i)) || self.rg(ih);
        let mut gates = r;
        gates.extend_from_slice(&u);
        gates.extend_from_slice(&c);
        let op = Op::GruCell {
            x: ix,
            h: ih,
            w: iw,
            gates,
        };
        self.push(op, Tensor::vector(out), rg)
    }

    /// Multiplies by a fixed mask that takes no gradient (dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let ia = self.index(a)?;
        let ta = self.val(ia);
        if mask.len() != ta.len() {
            return Err(Error::dim("mask_mul", ta.shape(), &[mask.len()]));
        }
        let data = ta.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(ia);
        self.push(Op::MaskMul(ia, mask), out, rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.index(a)?;
        let s = self.val(ia).sum();
        let rg = self.rg(ia);
        self.push(Op::Sum(ia), Tensor::scalar(s), rg)
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::contract("concat of zero parts"));
        }
        let idx = parts
            .iter()
            .map(|&p| self.index(p))
            .collect::<Result<Vec<_>>>()?;
        let first = self.val(idx[0]).shape().to_vec();
        if first.is_empty() {
            return Err(Error::dim("concat", &first, &[]));
        }
        let mut lead = 0;
        let mut data = Vec::new();
        for &i in &idx {
            let t = self.val(i);
            if t.rank() != first.len() || t.shape()[1..] != first[1..] {
                return Err(Error::dim("concat", &first, t.shape()));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = first;
        shape[0] = lead;
        let rg = idx.iter().any(|&i| self.rg(i));
        self.push(Op::Concat(idx), Tensor::new(shape, data)?, rg)
    }

    /// Rows `start..start + len` along the leading axis.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.index(a)?;
        let ta = self.val(ia);
        if ta.rank() == 0 || start + len > ta.shape()[0] {
            return Err(Error::dim("slice", ta.shape(), &[start, len]));
        }
        let inner: usize = ta.shape()[1..].iter().product();
        let data = ta.data()[start * inner..(start + len) * inner].to_vec();
        let mut shape = ta.shape().to_vec();
        shape[0] = len;
        let rg = self.rg(ia);
        self.push(Op::Slice { input: ia, start }, Tensor::new(shape, data)?, rg)
    }

    /// Inverse of [`Graph::concat`].
    pub fn split(&mut self, a: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice(a, start, s)?);
            start += s;
        }
        let total = self.shape(a)?.first().copied().unwrap_or(0);
        if start != total {
            return Err(Error::dim("split", &[total], sizes));
        }
        Ok(out)
    }

    /// Row `i` of a matrix as a vector.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let ia = self.index(a)?;
        let ta = self.val(ia);
        if ta.rank() != 2 {
            return Err(Error::dim("row", ta.shape(), &[i]));
        }
        if i >= ta.shape()[0] {
            return Err(Error::Bounds {
                index: i,
                len: ta.shape()[0],
            });
        }
        let out = Tensor::vector(ta.row(i).to_vec());
        let rg = self.rg(ia);
        self.push(Op::Row(ia, i), out, rg)
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::contract("stack of zero rows"));
        }
        let idx = rows
            .iter()
            .map(|&p| self.index(p))
            .collect::<Result<Vec<_>>>()?;
        let k = self.val(idx[0]).len();
        let mut data = Vec::with_capacity(k * idx.len());
        for &i in &idx {
            let t = self.val(i);
            if t.rank() != 1 || t.len() != k {
                return Err(Error::dim("stack_rows", &[k], t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let rg = idx.iter().any(|&i| self.rg(i));
        let n = idx.len();
        self.push(Op::StackRows(idx), Tensor::matrix(n, k, data)?, rg)
    }

    /// Row lookup into a table, e.g. an embedding matrix.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let it = self.index(table)?;
        let tt = self.val(it);
        if tt.rank() != 2 {
            return Err(Error::dim("gather", tt.shape(), &[ids.len()]));
        }
        let (rows, k) = (tt.shape()[0], tt.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * k);
        for &id in ids {
            if id >= rows {
                return Err(Error::Vocabulary { id, size: rows });
            }
            data.extend_from_slice(tt.row(id));
        }
        let rg = self.rg(it);
        self.push(
            Op::Gather(it, ids.to_vec()),
            Tensor::matrix(ids.len(), k, data)?,
            rg,
        )
    }

    /// Softmax restricted to positions where `mask` is true; masked
    /// positions get exactly zero.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let il = self.index(logits)?;
        let tl = self.val(il);
        if tl.rank() != 1 || tl.len() != mask.len() {
            return Err(Error::dim("masked_softmax", tl.shape(), &[mask.len()]));
        }
        let out = masked_softmax_values(tl.data(), mask)?;
        let rg = self.rg(il);
        self.push(Op::MaskedSoftmax(il, mask.to_vec()), Tensor::vector(out), rg)
    }

    /// Sum of the entries of a vector at the given positions.
    pub fn index_sum(&mut self, a: Var, positions: &[usize]) -> Result<Var> {
        let ia = self.index(a)?;
        let ta = self.val(ia);
        if ta.rank() != 1 {
            return Err(Error::dim("index_sum", ta.shape(), &[]));
        }
        let mut s = 0.0;
        for &p in positions {
            if p >= ta.len() {
                return Err(Error::Bounds {
                    index: p,
                    len: ta.len(),
                });
            }
            s += ta.data()[p];
        }
        let rg = self.rg(ia);
        self.push(Op::IndexSum(ia, positions.to_vec()), Tensor::scalar(s), rg)
    }

    /// `-ln(x + eps)` on a scalar.
    pub fn neg_log(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ia = self.index(a)?;
        let ta = self.val(ia);
        if ta.len() != 1 {
            return Err(Error::dim("neg_log", ta.shape(), &[]));
        }
        let x = ta.item() + eps;
        if x <= 0.0 {
            return Err(Error::Numeric(format!("neg_log of non-positive {x}")));
        }
        let rg = self.rg(ia);
        self.push(Op::NegLog(ia, eps), Tensor::scalar(-x.ln()), rg)
    }

    /// Reverse sweep from a scalar loss. A graph may be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let il = self.index(loss)?;
        if self.backward_done {
            return Err(Error::Lifecycle(
                "backward already ran on this graph; reset it first".into(),
            ));
        }
        if self.val(il).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.val(il).shape()
            )));
        }
        self.backward_done = true;

        let n = il + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[il] = Some(Tensor::full(self.val(il).shape(), 1.0));
        let param_len = self.params.map_or(0, ParamStore::len);
        let mut out = Gradients {
            graph: self.id,
            leaves: HashMap::new(),
            params: vec![None; param_len],
        };

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backward_node(
        &self,
        i: usize,
        g: Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {
                out.leaves.insert(i as u32, g);
            }
            Op::Constant => {}
            Op::Param(id) => accumulate_into(&mut out.params[id.0], g),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::matmul_bt_acc(g.data(), tb.data(), &mut ga, m, n, k);
                    self.acc(grads, *a, Tensor::new(vec![m, k], ga).unwrap());
                }
                if self.rg(*b) {
                    let mut gb = vec![0.0; k * n];
                    kernels::matmul_at_acc(ta.data(), g.data(), &mut gb, m, k, n);
                    self.acc(grads, *b, Tensor::new(vec![k, n], gb).unwrap());
                }
            }
            Op::MatVec(a, x) => {
                let (ta, tx) = (self.val(*a), self.val(*x));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                if self.rg(*a) {
                    let mut ga = vec![0.0; m * k];
                    kernels::outer_acc(g.data(), tx.data(), &mut ga);
                    self.acc(grads, *a, Tensor::new(vec![m, k], ga).unwrap());
                }
                if self.rg(*x) {
                    let mut gx = vec![0.0; k];
                    kernels::matvec_t_acc(ta.data(), g.data(), &mut gx, m, k);
                    self.acc(grads, *x, Tensor::vector(gx));
                }
            }
            Op::VecMat(w, mat) => {
                let (tw, tm) = (self.val(*w), self.val(*mat));
                let (n, k) = (tm.shape()[0], tm.shape()[1]);
                if self.rg(*w) {
                    let mut gw = vec![0.0; n];
                    kernels::matvec_acc(tm.data(), g.data(), &mut gw, n, k);
                    self.acc(grads, *w, Tensor::vector(gw));
                }
                if self.rg(*mat) {
                    let mut gm = vec![0.0; n * k];
                    kernels::outer_acc(tw.data(), g.data(), &mut gm);
                    self.acc(grads, *mat, Tensor::new(vec![n, k], gm).unwrap());
                }
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.rg(*a) {
                    self.acc(grads, *a, reduce_to(&g, self.val(*a)));
                }
                if self.rg(*b) {
                    let mut gb = reduce_to(&g, self.val(*b));
                    if sign < 0.0 {
                        gb.scale_in_place(-1.0);
                    }
                    self.acc(grads, *b, gb);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                if self.rg(*a) {
                    let prod = broadcast_mul(&g, tb);
                    self.acc(grads, *a, reduce_to(&prod, ta));
                }
                if self.rg(*b) {
                    let prod = broadcast_mul(&g, ta);
                    self.acc(grads, *b, reduce_to(&prod, tb));
                }
            }
            Op::Scale(a, k) => {
                let mut ga = g;
                ga.scale_in_place(*k);
                self.acc(grads, *a, ga);
            }
            Op::OneMinus(a) => {
                let mut ga = g;
                ga.scale_in_place(-1.0);
                self.acc(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let mut ga = g;
                for (gv, &yv) in ga.data_mut().iter_mut().zip(y.data()) {
                    *gv *= yv * (1.0 - yv);
                }
                self.acc(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let mut ga = g;
                for (gv, &yv) in ga.data_mut().iter_mut().zip(y.data()) {
                    *gv *= 1.0 - yv * yv;
                }
                self.acc(grads, *a, ga);
            }
            Op::MaskMul(a, mask) => {
                let mut ga = g;
                for (gv, m) in ga.data_mut().iter_mut().zip(mask) {
                    *gv *= m;
                }
                self.acc(grads, *a, ga);
            }
            Op::Sum(a) => {
                let ga = Tensor::full(self.val(*a).shape(), g.item());
                self.acc(grads, *a, ga);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.val(p);
                    let len = t.len();
                    if self.rg(p) {
                        let part = Tensor::new(
                            t.shape().to_vec(),
                            g.data()[offset..offset + len].to_vec(),
                        )
                        .unwrap();
                        self.acc(grads, p, part);
                    }
                    offset += len;
                }
            }
            Op::Slice { input, start } => {
                let t = self.val(*input);
                let inner: usize = t.shape()[1..].iter().product();
                let mut ga = Tensor::zeros(t.shape());
                ga.data_mut()[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                self.acc(grads, *input, ga);
            }
            Op::Row(a, r) => {
                let t = self.val(*a);
                let k = t.shape()[1];
                self.acc_with(grads, *a, t.shape(), |buf| {
                    for (b, gv) in buf[r * k..(r + 1) * k].iter_mut().zip(g.data()) {
                        *b += gv;
                    }
                });
            }
            Op::StackRows(rows) => {
                for (r, &p) in rows.iter().enumerate() {
                    if self.rg(p) {
                        self.acc(grads, p, Tensor::vector(g.row(r).to_vec()));
                    }
                }
            }
            Op::Gather(table, ids) => {
                let t = self.val(*table);
                let k = t.shape()[1];
                let apply = |buf: &mut [f64]| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (b, gv) in buf[id * k..(id + 1) * k].iter_mut().zip(g.row(r)) {
                            *b += gv;
                        }
                    }
                };
                if let Op::Param(pid) = self.nodes[*table].op {
                    // Skip the dense per-node buffer for parameter tables.
                    let slot = out.params[pid.0].get_or_insert_with(|| Tensor::zeros(t.shape()));
                    apply(slot.data_mut());
                } else {
                    self.acc_with(grads, *table, t.shape(), apply);
                }
            }
            Op::MaskedSoftmax(a, mask) => {
                let yd = y.data();
                let dotp: f64 = yd
                    .iter()
                    .zip(g.data())
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|((yv, gv), _)| yv * gv)
                    .sum();
                let ga: Vec<f64> = yd
                    .iter()
                    .zip(g.data())
                    .zip(mask)
                    .map(|((yv, gv), &m)| if m { yv * (gv - dotp) } else { 0.0 })
                    .collect();
                self.acc(grads, *a, Tensor::vector(ga));
            }
            Op::IndexSum(a, positions) => {
                let t = self.val(*a);
                let gv = g.item();
                self.acc_with(grads, *a, t.shape(), |buf| {
                    for &p in positions {
                        buf[p] += gv;
                    }
                });
            }
            Op::NegLog(a, eps) => {
                let x = self.val(*a).item() + eps;
                let ga = Tensor::full(self.val(*a).shape(), -g.item() / x);
                self.acc(grads, *a, ga);
            }
            Op::GruCell { x, h, w, gates } => {
                let hd = self.val(*h).data();
                let n = hd.len();
                let (r, rest) = gates.split_at(n);
                let (u, c) = rest.split_at(n);
                let gd = g.data();
                let mut dh = vec![0.0; n];
                let mut d_u = vec![0.0; n];
                let mut d_c = vec![0.0; n];
                for i in 0..n {
                    dh[i] = gd[i] * (1.0 - u[i]);
                    d_u[i] = gd[i] * (c[i] - hd[i]) * u[i] * (1.0 - u[i]);
                    d_c[i] = gd[i] * u[i] * (1.0 - c[i] * c[i]);
                }
                let mut d_rh = vec![0.0; n];
                kernels::matvec_t_acc(self.val(w[2]).data(), &d_c, &mut d_rh, n, n);
                let mut d_r = vec![0.0; n];
                for i in 0..n {
                    dh[i] += d_rh[i] * r[i];
                    d_r[i] = d_rh[i] * hd[i] * r[i] * (1.0 - r[i]);
                }
                kernels::matvec_t_acc(self.val(w[1]).data(), &d_u, &mut dh, n, n);
                kernels::matvec_t_acc(self.val(w[0]).data(), &d_r, &mut dh, n, n);

                let rh: Vec<f64> = r.iter().zip(hd).map(|(a, b)| a * b).collect();
                let pre = [(&d_r, hd), (&d_u, hd), (&d_c, &rh[..])];
                for (k, (d, input)) in pre.into_iter().enumerate() {
                    if self.rg(w[k]) {
                        self.acc_with(grads, w[k], &[n, n], |buf| kernels::outer_acc(d, input, buf));
                    }
                }
                for (k, d) in [d_r, d_u, d_c].into_iter().enumerate() {
                    if self.rg(x[k]) {
                        self.acc(grads, x[k], Tensor::vector(d));
                    }
                }
                if self.rg(*h) {
                    self.acc(grads, *h, Tensor::vector(dh));
                }
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
        accumulate_into(&mut grads[i], g);
    }

    fn acc_with(
        &self,
        grads: &mut [Option<Tensor>],
        i: usize,
        shape: &[usize],
        f: impl FnOnce(&mut [f64]),
    ) {
        let slot = grads[i].get_or_insert_with(|| Tensor::zeros(shape));
        f(slot.data_mut());
    }
}

fn accumulate_into(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Sums a gradient down to a scalar operand's shape when it was broadcast.
fn reduce_to(g: &Tensor, operand: &Tensor) -> Tensor {
    if operand.shape() == g.shape() {
        g.clone()
    } else {
        Tensor::new(operand.shape().to_vec(), vec![g.sum()]).unwrap()
    }
}

fn broadcast_mul(g: &Tensor, other: &Tensor) -> Tensor {
    let od = other.data();
    let data = g
        .data()
        .iter()
        .enumerate()
        .map(|(i, gv)| gv * if od.len() == 1 { od[0] } else { od[i] })
        .collect();
    Tensor::new(g.shape().to_vec(), data).unwrap()
}

/// Max-subtracted softmax over the unmasked entries of `logits`.
pub fn masked_softmax_values(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptySupport { len: logits.len() });
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    Ok(out)
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    graph: u32,
    leaves: HashMap<u32, Tensor>,
    params: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Graph::leaf`]. `None` when the leaf
    /// is unreachable from the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.graph != self.graph {
            return None;
        }
        self.leaves.get(&v.index)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.0).and_then(Option::as_ref)
    }

    /// Per-parameter gradients aligned with the bound store.
    pub fn into_params(self) -> Vec<Option<Tensor>> {
        self.params
    }
}
