//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! Every op evaluates eagerly and appends a node, so the node vector is
//! already in topological order; `backward` walks it once in reverse.

use std::cell::Cell;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    SliceCols { input: Var, start: usize },
    ScaleRows(Var, Var),
    Scale(Var, F),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Embedding { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize> },
    Sum(Var),
}

enum Value<'a, F> {
    Owned(Tensor<F>),
    Borrowed(&'a Tensor<F>),
}

impl<F> Value<'_, F> {
    fn get(&self) -> &Tensor<F> {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

struct Node<'a, F> {
    value: Value<'a, F>,
    op: Op<F>,
    requires_grad: bool,
}

thread_local! {
    static TANH_BACKWARD_FAULT: Cell<bool> = const { Cell::new(false) };
}

/// Corrupts the tanh derivative on the current thread. Only exists so the
/// gradient checker can be shown to catch a broken backward rule.
#[doc(hidden)]
pub fn inject_tanh_backward_fault(enabled: bool) {
    TANH_BACKWARD_FAULT.with(|f| f.set(enabled));
}

pub struct Graph<'a, F> {
    nodes: Vec<Node<'a, F>>,
    grads: Vec<Option<Vec<F>>>,
    param_vars: Vec<(ParamId, Var)>,
}

impl<F: Scalar> Default for Graph<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

fn check2<F: Scalar>(op: &'static str, t: &Tensor<F>) -> Result<(usize, usize)> {
    if t.rank() != 2 {
        return Err(Error::Shape {
            op,
            left: t.dims().to_vec(),
            right: vec![0, 0],
        });
    }
    Ok((t.dims()[0], t.dims()[1]))
}

fn shape_err<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Error {
    Error::Shape {
        op,
        left: a.dims().to_vec(),
        right: b.dims().to_vec(),
    }
}

impl<'a, F: Scalar> Graph<'a, F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        self.nodes[v.0].value.get()
    }

    /// Gradient of the last `backward` call with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Value<'a, F>, op: Op<F>, requires_grad: bool, name: &'static str) -> Result<Var> {
        if cfg!(debug_assertions) && !value.get().all_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Result<Var> {
        self.push(Value::Owned(t), Op::Leaf, false, "constant")
    }

    /// A leaf that receives gradient but is not tied to a parameter store.
    pub fn variable(&mut self, t: Tensor<F>) -> Result<Var> {
        self.push(Value::Owned(t), Op::Leaf, true, "variable")
    }

    /// Binds a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &'a ParamStore<F>, id: ParamId) -> Result<Var> {
        if let Some(&(_, v)) = self.param_vars.iter().find(|(p, _)| *p == id) {
            return Ok(v);
        }
        let v = self.push(Value::Borrowed(&store.get(id).value), Op::Leaf, true, "param")?;
        self.param_vars.push((id, v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = check2("matmul", ta)?;
        let (k2, n) = check2("matmul", tb)?;
        if k != k2 {
            return Err(shape_err("matmul", ta, tb));
        }
        let (ad, bd) = (ta.data(), tb.data());
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ad[i * k + p];
                if x == F::zero() {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &w) in orow.iter_mut().zip(brow) {
                    *o = *o + x * w;
                }
            }
        }
        let rg = self.needs(&[a, b]);
        self.push(Value::Owned(Tensor::new(vec![m, n], out)?), Op::MatMul(a, b), rg, "matmul")
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(F, F) -> F) -> Result<Tensor<F>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.dims() != tb.dims() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.dims().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let rg = self.needs(&[a, b]);
        self.push(Value::Owned(t), Op::Add(a, b), rg, "add")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let rg = self.needs(&[a, b]);
        self.push(Value::Owned(t), Op::Mul(a, b), rg, "mul")
    }

    /// Adds a length-`n` bias to every row of an `m x n` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (m, n) = check2("add_bias", tx)?;
        if tb.len() != n {
            return Err(shape_err("add_bias", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for i in 0..m {
            for (o, &b) in data[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *o = *o + b;
            }
        }
        let rg = self.needs(&[x, bias]);
        self.push(Value::Owned(Tensor::new(vec![m, n], data)?), Op::AddBias(x, bias), rg, "add_bias")
    }

    /// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() || axis > 1 {
            return Err(Error::invalid(format!("concat of {} inputs on axis {axis}", inputs.len())));
        }
        let first = self.value(inputs[0]);
        let (r0, c0) = check2("concat", first)?;
        let mut dims = vec![r0, c0];
        for &v in &inputs[1..] {
            let t = self.value(v);
            let (r, c) = check2("concat", t)?;
            if axis == 0 && c != c0 || axis == 1 && r != r0 {
                return Err(shape_err("concat", first, t));
            }
            dims[axis] += if axis == 0 { r } else { c };
        }
        let data = if axis == 0 {
            inputs.iter().flat_map(|&v| self.value(v).data().iter().copied()).collect()
        } else {
            let mut data = Vec::with_capacity(dims[0] * dims[1]);
            for i in 0..r0 {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row(i));
                }
            }
            data
        };
        let rg = self.needs(inputs);
        self.push(
            Value::Owned(Tensor::new(dims, data)?),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
            "concat",
        )
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = check2("slice_cols", t)?;
        if len == 0 || start + len > n {
            return Err(Error::invalid(format!("slice {start}..{} of width {n}", start + len)));
        }
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        let rg = self.needs(&[x]);
        self.push(
            Value::Owned(Tensor::new(vec![m, len], data)?),
            Op::SliceCols { input: x, start },
            rg,
            "slice_cols",
        )
    }

    /// Multiplies row `i` of `x` (`m x n`) by `scale[i]` (`m x 1`).
    pub fn scale_rows(&mut self, x: Var, scale: Var) -> Result<Var> {
        let (tx, ts) = (self.value(x), self.value(scale));
        let (m, n) = check2("scale_rows", tx)?;
        if ts.dims() != [m, 1] {
            return Err(shape_err("scale_rows", tx, ts));
        }
        let mut data = tx.data().to_vec();
        for (i, &s) in ts.data().iter().enumerate() {
            for o in &mut data[i * n..(i + 1) * n] {
                *o = *o * s;
            }
        }
        let rg = self.needs(&[x, scale]);
        self.push(Value::Owned(Tensor::new(vec![m, n], data)?), Op::ScaleRows(x, scale), rg, "scale_rows")
    }

    pub fn scale(&mut self, x: Var, c: F) -> Result<Var> {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * c).collect();
        let t = Tensor::new(t.dims().to_vec(), data)?;
        let rg = self.needs(&[x]);
        self.push(Value::Owned(t), Op::Scale(x, c), rg, "scale")
    }

    fn unary(&mut self, x: Var, f: impl Fn(F) -> F) -> Result<Tensor<F>> {
        let t = self.value(x);
        Tensor::new(t.dims().to_vec(), t.data().iter().map(|&v| f(v)).collect())
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let t = self.unary(x, F::tanh)?;
        let rg = self.needs(&[x]);
        self.push(Value::Owned(t), Op::Tanh(x), rg, "tanh")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let t = self.unary(x, sigmoid)?;
        let rg = self.needs(&[x]);
        self.push(Value::Owned(t), Op::Sigmoid(x), rg, "sigmoid")
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = t.cols();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::new(t.dims().to_vec(), data)?;
        let rg = self.needs(&[x]);
        self.push(Value::Owned(t), Op::Softmax(x), rg, "softmax")
    }

    /// Gathers rows of `table` (`V x d`) by id, producing `ids.len() x d`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = check2("embedding", t)?;
        if ids.is_empty() {
            return Err(Error::invalid("embedding lookup with no ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::invalid(format!("id {id} out of range for table of {v} rows")));
            }
            data.extend_from_slice(t.row(id));
        }
        let rg = self.needs(&[table]);
        self.push(
            Value::Owned(Tensor::new(vec![ids.len(), d], data)?),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
            "embedding",
        )
    }

    /// Per-row `-log softmax(logits)[target]`, shaped `m x 1`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (m, n) = check2("cross_entropy", t)?;
        if targets.len() != m {
            return Err(Error::invalid(format!("{} targets for {m} rows", targets.len())));
        }
        let mut out = Vec::with_capacity(m);
        for (i, &target) in targets.iter().enumerate() {
            if target >= n {
                return Err(Error::invalid(format!("target {target} >= logit width {n}")));
            }
            let row = t.row(i);
            out.push(log_sum_exp(row) - row[target]);
        }
        let rg = self.needs(&[logits]);
        self.push(
            Value::Owned(Tensor::new(vec![m, 1], out)?),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            rg,
            "cross_entropy",
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(F::zero(), |acc, &v| acc + v);
        let rg = self.needs(&[x]);
        self.push(Value::Owned(Tensor::scalar(s)), Op::Sum(x), rg, "sum")
    }

    /// Populates gradients of `loss` with respect to every node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).dims()
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![F::one()]);
        let fault = TANH_BACKWARD_FAULT.with(Cell::get);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let (lower, upper) = self.grads.split_at_mut(i);
            let Some(dout) = upper[0].as_deref() else {
                continue;
            };
            backprop_node(&self.nodes, i, dout, lower, fault);
        }
        Ok(())
    }

    /// Consumes the graph, returning gradients of every bound parameter.
    pub fn into_param_grads(self) -> ParamGrads<F> {
        let mut grads = self.grads;
        let entries = self
            .param_vars
            .iter()
            .filter_map(|&(id, v)| grads[v.0].take().map(|g| (id, g)))
            .collect();
        ParamGrads { entries }
    }
}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub(crate) fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let s = row.iter().fold(F::zero(), |acc, &v| acc + (v - max).exp());
    max + s.ln()
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let mut s = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        s = s + *v;
    }
    for v in row.iter_mut() {
        *v = *v / s;
    }
}

fn acc_slot<F: Scalar>(grads: &mut [Option<Vec<F>>], v: Var, len: usize) -> &mut [F] {
    grads[v.0].get_or_insert_with(|| vec![F::zero(); len])
}

fn backprop_node<F: Scalar>(
    nodes: &[Node<'_, F>],
    i: usize,
    dout: &[F],
    grads: &mut [Option<Vec<F>>],
    tanh_fault: bool,
) {
    let val = |v: Var| nodes[v.0].value.get();
    let live = |v: Var| nodes[v.0].requires_grad;
    let out = nodes[i].value.get();
    match &nodes[i].op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k) = (ta.dims()[0], ta.dims()[1]);
            let n = tb.dims()[1];
            if live(*a) {
                // dA = dOut · Bᵀ, accumulated row by row over a transposed B.
                let bd = tb.data();
                let mut bt = vec![F::zero(); n * k];
                for p in 0..k {
                    for j in 0..n {
                        bt[j * k + p] = bd[p * n + j];
                    }
                }
                let ga = acc_slot(grads, *a, m * k);
                for r in 0..m {
                    let grow = &mut ga[r * k..(r + 1) * k];
                    for j in 0..n {
                        let d = dout[r * n + j];
                        if d == F::zero() {
                            continue;
                        }
                        for (g, &w) in grow.iter_mut().zip(&bt[j * k..(j + 1) * k]) {
                            *g = *g + d * w;
                        }
                    }
                }
            }
            if live(*b) {
                let gb = acc_slot(grads, *b, k * n);
                for r in 0..m {
                    let drow = &dout[r * n..(r + 1) * n];
                    for p in 0..k {
                        let x = ta.data()[r * k + p];
                        if x == F::zero() {
                            continue;
                        }
                        for (g, &d) in gb[p * n..(p + 1) * n].iter_mut().zip(drow) {
                            *g = *g + x * d;
                        }
                    }
                }
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if live(*v) {
                    let g = acc_slot(grads, *v, dout.len());
                    for (g, &d) in g.iter_mut().zip(dout) {
                        *g = *g + d;
                    }
                }
            }
        }
        Op::Mul(a, b) => {
            for (v, other) in [(a, b), (b, a)] {
                if live(*v) {
                    let o = val(*other).data();
                    let g = acc_slot(grads, *v, dout.len());
                    for ((g, &d), &y) in g.iter_mut().zip(dout).zip(o) {
                        *g = *g + d * y;
                    }
                }
            }
        }
        Op::AddBias(x, b) => {
            if live(*x) {
                let g = acc_slot(grads, *x, dout.len());
                for (g, &d) in g.iter_mut().zip(dout) {
                    *g = *g + d;
                }
            }
            if live(*b) {
                let n = val(*b).len();
                let g = acc_slot(grads, *b, n);
                for row in dout.chunks(n) {
                    for (g, &d) in g.iter_mut().zip(row) {
                        *g = *g + d;
                    }
                }
            }
        }
        Op::Concat { inputs, axis } => {
            let total_cols = out.dims()[1];
            let mut offset = 0;
            for &v in inputs {
                let t = val(v);
                let (r, c) = (t.dims()[0], t.dims()[1]);
                if live(v) {
                    let g = acc_slot(grads, v, r * c);
                    if *axis == 0 {
                        for (g, &d) in g.iter_mut().zip(&dout[offset * c..(offset + r) * c]) {
                            *g = *g + d;
                        }
                    } else {
                        for row in 0..r {
                            let src = &dout[row * total_cols + offset..row * total_cols + offset + c];
                            for (g, &d) in g[row * c..(row + 1) * c].iter_mut().zip(src) {
                                *g = *g + d;
                            }
                        }
                    }
                }
                offset += if *axis == 0 { r } else { c };
            }
        }
        Op::SliceCols { input, start } => {
            if live(*input) {
                let t = val(*input);
                let (m, n) = (t.dims()[0], t.dims()[1]);
                let len = out.dims()[1];
                let g = acc_slot(grads, *input, m * n);
                for r in 0..m {
                    for j in 0..len {
                        g[r * n + start + j] = g[r * n + start + j] + dout[r * len + j];
                    }
                }
            }
        }
        Op::ScaleRows(x, s) => {
            let (tx, ts) = (val(*x), val(*s));
            let n = tx.dims()[1];
            if live(*x) {
                let g = acc_slot(grads, *x, tx.len());
                for (r, &sc) in ts.data().iter().enumerate() {
                    for j in 0..n {
                        g[r * n + j] = g[r * n + j] + dout[r * n + j] * sc;
                    }
                }
            }
            if live(*s) {
                let g = acc_slot(grads, *s, ts.len());
                for (r, g) in g.iter_mut().enumerate() {
                    let row = &tx.data()[r * n..(r + 1) * n];
                    let d = &dout[r * n..(r + 1) * n];
                    *g = *g + row.iter().zip(d).fold(F::zero(), |acc, (&a, &b)| acc + a * b);
                }
            }
        }
        Op::Scale(x, c) => {
            let g = acc_slot(grads, *x, dout.len());
            for (g, &d) in g.iter_mut().zip(dout) {
                *g = *g + d * *c;
            }
        }
        Op::Tanh(x) => {
            let g = acc_slot(grads, *x, dout.len());
            for ((g, &d), &y) in g.iter_mut().zip(dout).zip(out.data()) {
                let deriv = if tanh_fault { F::one() - y } else { F::one() - y * y };
                *g = *g + d * deriv;
            }
        }
        Op::Sigmoid(x) => {
            let g = acc_slot(grads, *x, dout.len());
            for ((g, &d), &y) in g.iter_mut().zip(dout).zip(out.data()) {
                *g = *g + d * y * (F::one() - y);
            }
        }
        Op::Softmax(x) => {
            let n = out.cols();
            let g = acc_slot(grads, *x, dout.len());
            for ((gr, dr), yr) in g.chunks_mut(n).zip(dout.chunks(n)).zip(out.data().chunks(n)) {
                let dot = dr.iter().zip(yr).fold(F::zero(), |acc, (&d, &y)| acc + d * y);
                for ((g, &d), &y) in gr.iter_mut().zip(dr).zip(yr) {
                    *g = *g + y * (d - dot);
                }
            }
        }
        Op::Embedding { table, ids } => {
            let t = val(*table);
            let d = t.dims()[1];
            let g = acc_slot(grads, *table, t.len());
            for (r, &id) in ids.iter().enumerate() {
                for (g, &dv) in g[id * d..(id + 1) * d].iter_mut().zip(&dout[r * d..(r + 1) * d]) {
                    *g = *g + dv;
                }
            }
        }
        Op::CrossEntropy { logits, targets } => {
            let t = val(*logits);
            let n = t.dims()[1];
            let g = acc_slot(grads, *logits, t.len());
            let mut probs = vec![F::zero(); n];
            for (r, &target) in targets.iter().enumerate() {
                if dout[r] == F::zero() {
                    continue;
                }
                probs.copy_from_slice(t.row(r));
                softmax_in_place(&mut probs);
                probs[target] = probs[target] - F::one();
                for (g, &p) in g[r * n..(r + 1) * n].iter_mut().zip(&probs) {
                    *g = *g + dout[r] * p;
                }
            }
        }
        Op::Sum(x) => {
            let n = val(*x).len();
            let g = acc_slot(grads, *x, n);
            for g in g.iter_mut() {
                *g = *g + dout[0];
            }
        }
    }
}
