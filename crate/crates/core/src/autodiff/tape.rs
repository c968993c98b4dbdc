use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{ParamId, ParameterStore, Tensor};
use crate::math;
use crate::survival::{self, ObservedOutcome, HAZARD_CEIL, HAZARD_FLOOR};
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    MatMulNt {
        x: Var,
        w: Var,
    },
    AddRow {
        x: Var,
        b: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Stack(Vec<Var>),
    /// Keeps `tanh(q + k)` for the reverse pass.
    AttnScores {
        q: Var,
        keys_proj: Var,
        v: Var,
        tanh: Vec<f64>,
    },
    SoftmaxRows(Var),
    WeightedSum {
        weights: Var,
        keys: Var,
    },
    Sum(Var),
    SurvivalNll {
        phi: Var,
        outcomes: Vec<ObservedOutcome>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Record of executed operations; [`Tape::backward`] replays it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of the leaves reachable from a loss.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape { op, left: a.shape().to_vec(), right: b.shape().to_vec() }
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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient is tracked through it.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Input whose gradient is reported by [`Tape::backward`].
    pub fn input_with_grad(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, true)
    }

    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id), true)
    }

    /// `x · wᵀ` where `x` is `[.., in]` and `w` is `[out, in]`.
    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.shape().len() != 2 || xv.shape().is_empty() || xv.last_dim() != wv.shape()[1] {
            return Err(shape_err("matmul", xv, wv));
        }
        let (rows, inner, out) = (xv.leading(), wv.shape()[1], wv.shape()[0]);
        let mut data = vec![0.0; rows * out];
        let (xd, wd) = (xv.data(), wv.data());
        for r in 0..rows {
            let xr = &xd[r * inner..(r + 1) * inner];
            for o in 0..out {
                let wr = &wd[o * inner..(o + 1) * inner];
                data[r * out + o] = dot(xr, wr);
            }
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(Tensor::new(shape, data)?, Op::MatMulNt { x, w }, needs))
    }

    /// Adds the vector `b` (`[n]`) to every row of `x` (`[.., n]`).
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.shape().len() != 1 || xv.last_dim() != bv.len() || xv.shape().is_empty() {
            return Err(shape_err("add_row", xv, bv));
        }
        let n = bv.len();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (a, c) in row.iter_mut().zip(bv.data()) {
                *a += c;
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(out, Op::AddRow { x, b }, needs))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err(name, av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        let data = av.data().iter().map(|x| f(*x)).collect();
        Tensor::new(av.shape().to_vec(), data).expect("same shape")
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, math::sigmoid);
        let needs = self.needs(a);
        self.push(t, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, math::tanh);
        let needs = self.needs(a);
        self.push(t, Op::Tanh(a), needs)
    }

    /// Concatenates along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .nodes
            .get(parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?.0)
            .map(|n| &n.value)
            .unwrap();
        let lead_shape = first.shape()[..first.shape().len().saturating_sub(1)].to_vec();
        let rows = first.leading();
        let mut width = 0;
        for &p in parts {
            let v = self.value(p);
            if v.shape().is_empty() || v.shape()[..v.shape().len() - 1] != lead_shape[..] {
                return Err(shape_err("concat", first, v));
            }
            width += v.last_dim();
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &p in parts {
                let v = self.value(p);
                let w = v.last_dim();
                data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead_shape;
        shape.push(width);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec()), needs))
    }

    /// Rows `ids` of `table` (`[V, d]`), giving `[ids.len(), d]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if tv.shape().len() != 2 {
            return Err(Error::invalid(format!("embedding table must be 2-D, got {:?}", tv.shape())));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Lookup { id, size: rows });
            }
            data.extend_from_slice(&tv.data()[id * d..(id + 1) * d]);
        }
        let t = Tensor::new(vec![ids.len(), d], data)?;
        let needs = self.needs(table);
        Ok(self.push(t, Op::Gather { table, ids: ids.to_vec() }, needs))
    }

    /// Stacks `L` tensors of shape `[B, k]` into `[B, L, k]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.value(*parts.first().ok_or_else(|| Error::invalid("stack of nothing"))?);
        if first.shape().len() != 2 {
            return Err(Error::invalid(format!("stack expects [B, k] parts, got {:?}", first.shape())));
        }
        let (b, k, l) = (first.shape()[0], first.shape()[1], parts.len());
        for &p in parts {
            if self.value(p).shape() != first.shape() {
                return Err(shape_err("stack", first, self.value(p)));
            }
        }
        let mut data = vec![0.0; b * l * k];
        for (j, &p) in parts.iter().enumerate() {
            let src = self.value(p).data();
            for bi in 0..b {
                data[(bi * l + j) * k..(bi * l + j + 1) * k].copy_from_slice(&src[bi * k..(bi + 1) * k]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(vec![b, l, k], data)?, Op::Stack(parts.to_vec()), needs))
    }

    /// Additive scores `e[b, j] = v · tanh(q[b] + keys_proj[b, j])`.
    pub fn attn_scores(&mut self, q: Var, keys_proj: Var, v: Var) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(keys_proj), self.value(v));
        if qv.shape().len() != 2 || kv.shape().len() != 3 || vv.shape().len() != 1 {
            return Err(shape_err("attention", qv, kv));
        }
        let (b, a) = (qv.shape()[0], qv.shape()[1]);
        let l = kv.shape()[1];
        if kv.shape()[0] != b || kv.shape()[2] != a || vv.len() != a {
            return Err(shape_err("attention", qv, kv));
        }
        let needs = self.needs(q) || self.needs(keys_proj) || self.needs(v);
        let mut data = vec![0.0; b * l];
        let mut tanh = if needs { vec![0.0; b * l * a] } else { Vec::new() };
        for bi in 0..b {
            let qrow = &qv.data()[bi * a..(bi + 1) * a];
            for j in 0..l {
                let base = (bi * l + j) * a;
                let krow = &kv.data()[base..base + a];
                let mut e = 0.0;
                for c in 0..a {
                    let t = math::tanh(qrow[c] + krow[c]);
                    if needs {
                        tanh[base + c] = t;
                    }
                    e += vv.data()[c] * t;
                }
                data[bi * l + j] = e;
            }
        }
        Ok(self.push(Tensor::new(vec![b, l], data)?, Op::AttnScores { q, keys_proj, v, tanh }, needs))
    }

    /// Softmax over the last axis.
    pub fn softmax_rows(&mut self, e: Var) -> Var {
        let ev = self.value(e);
        let n = ev.last_dim();
        let mut out = ev.clone();
        for row in out.data_mut().chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = math::exp(*x - max);
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let needs = self.needs(e);
        self.push(out, Op::SoftmaxRows(e), needs)
    }

    /// `c[b] = Σ_j w[b, j] keys[b, j]` for `w: [B, L]`, `keys: [B, L, k]`.
    pub fn weighted_sum(&mut self, weights: Var, keys: Var) -> Result<Var> {
        let (wv, kv) = (self.value(weights), self.value(keys));
        if wv.shape().len() != 2 || kv.shape().len() != 3 || kv.shape()[..2] != wv.shape()[..] {
            return Err(shape_err("weighted_sum", wv, kv));
        }
        let (b, l, k) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
        let mut data = vec![0.0; b * k];
        for bi in 0..b {
            let out = &mut data[bi * k..(bi + 1) * k];
            for j in 0..l {
                let w = wv.data()[bi * l + j];
                let krow = &kv.data()[(bi * l + j) * k..(bi * l + j + 1) * k];
                for (o, kk) in out.iter_mut().zip(krow) {
                    *o += w * kk;
                }
            }
        }
        let needs = self.needs(weights) || self.needs(keys);
        Ok(self.push(Tensor::new(vec![b, k], data)?, Op::WeightedSum { weights, keys }, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    /// Mean over the batch of the right-censored negative log-likelihood,
    /// with hazards `σ(phi)` clamped before every logarithm. `phi` is `[B, H]`
    /// and every outcome must already lie on `1..=H`.
    pub fn survival_nll(&mut self, phi: Var, outcomes: &[ObservedOutcome]) -> Result<Var> {
        let pv = self.value(phi);
        if pv.shape().len() != 2 || pv.shape()[0] != outcomes.len() || outcomes.is_empty() {
            return Err(Error::invalid(format!(
                "survival_nll: logits {:?} for {} outcomes",
                pv.shape(),
                outcomes.len()
            )));
        }
        let h = pv.shape()[1];
        let mut hazard = vec![0.0; h];
        let mut total = 0.0;
        for (row, o) in pv.data().chunks(h).zip(outcomes) {
            for (hz, p) in hazard.iter_mut().zip(row) {
                *hz = math::sigmoid(*p);
            }
            total += survival::sample_nll(&hazard, *o)?;
        }
        let value = Tensor::scalar(total / outcomes.len() as f64);
        let needs = self.needs(phi);
        Ok(self.push(value, Op::SurvivalNll { phi, outcomes: outcomes.to_vec() }, needs))
    }

    /// Reverse pass from a scalar `loss`; gradients of leaves are returned.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut seed = Tensor::zeros(lv.shape());
        seed.data_mut()[0] = 1.0;
        grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                grads[i] = None;
                continue;
            }
            let g = match &node.op {
                Op::Input | Op::Param(_) => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.propagate(node, &node.value, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    /// Reverse pass that also adds parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParameterStore) -> Result<Grads> {
        let grads = self.backward(loss)?;
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.grad_mut(*id).add_assign(g);
            }
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, make: impl FnOnce() -> Tensor) {
        if !self.needs(v) {
            return;
        }
        let t = make();
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot @ None => *slot = Some(t),
        }
    }

    /// In-place accumulation for ops that scatter into a zero buffer.
    fn slot<'a>(&self, grads: &'a mut [Option<Tensor>], v: Var) -> &'a mut Tensor {
        let shape = self.value(v).shape();
        grads[v.0].get_or_insert_with(|| Tensor::zeros(shape))
    }

    fn propagate(&self, node: &Node, out: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::MatMulNt { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, inner, outd) = (xv.leading(), wv.shape()[1], wv.shape()[0]);
                let gd = g.data();
                if self.needs(*x) {
                    let dx = self.slot(grads, *x).data_mut();
                    for r in 0..rows {
                        let dxr = &mut dx[r * inner..(r + 1) * inner];
                        for o in 0..outd {
                            let go = gd[r * outd + o];
                            if go != 0.0 {
                                axpy(dxr, go, &wv.data()[o * inner..(o + 1) * inner]);
                            }
                        }
                    }
                }
                if self.needs(*w) {
                    let dw = self.slot(grads, *w).data_mut();
                    for r in 0..rows {
                        let xr = &xv.data()[r * inner..(r + 1) * inner];
                        for o in 0..outd {
                            let go = gd[r * outd + o];
                            if go != 0.0 {
                                axpy(&mut dw[o * inner..(o + 1) * inner], go, xr);
                            }
                        }
                    }
                }
            }
            Op::AddRow { x, b } => {
                self.accumulate(grads, *x, || g.clone());
                if self.needs(*b) {
                    let n = self.value(*b).len();
                    let db = self.slot(grads, *b).data_mut();
                    for row in g.data().chunks(n) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || scaled(g, -1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, || zip(g, bv, |x, y| x * y));
                self.accumulate(grads, *b, || zip(g, av, |x, y| x * y));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, || zip(g, out, |gi, s| gi * s * (1.0 - s)));
            }
            Op::Tanh(a) => {
                self.accumulate(grads, *a, || zip(g, out, |gi, t| gi * (1.0 - t * t)));
            }
            Op::Concat(parts) => {
                let rows = out.leading();
                let width = out.last_dim();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.needs(p) {
                        let dst = self.slot(grads, p).data_mut();
                        for r in 0..rows {
                            let src = &g.data()[r * width + offset..r * width + offset + w];
                            for (d, s) in dst[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::Gather { table, ids } => {
                if self.needs(*table) {
                    let d = self.value(*table).shape()[1];
                    let dt = self.slot(grads, *table).data_mut();
                    for (r, &id) in ids.iter().enumerate() {
                        for (dst, src) in dt[id * d..(id + 1) * d].iter_mut().zip(&g.data()[r * d..(r + 1) * d]) {
                            *dst += src;
                        }
                    }
                }
            }
            Op::Stack(parts) => {
                let (b, l, k) = (out.shape()[0], out.shape()[1], out.shape()[2]);
                for (j, &p) in parts.iter().enumerate() {
                    if self.needs(p) {
                        let dst = self.slot(grads, p).data_mut();
                        for bi in 0..b {
                            let src = &g.data()[(bi * l + j) * k..(bi * l + j + 1) * k];
                            for (d, s) in dst[bi * k..(bi + 1) * k].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                }
            }
            Op::AttnScores { q, keys_proj, v, tanh } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*keys_proj), self.value(*v));
                let (b, a) = (qv.shape()[0], qv.shape()[1]);
                let l = kv.shape()[1];
                let mut dq = vec![0.0; b * a];
                let mut dk = if self.needs(*keys_proj) { vec![0.0; b * l * a] } else { Vec::new() };
                let mut dv = vec![0.0; a];
                for bi in 0..b {
                    for j in 0..l {
                        let ge = g.data()[bi * l + j];
                        if ge == 0.0 {
                            continue;
                        }
                        let base = (bi * l + j) * a;
                        for c in 0..a {
                            let t = tanh[base + c];
                            let inner = ge * vv.data()[c] * (1.0 - t * t);
                            dq[bi * a + c] += inner;
                            if !dk.is_empty() {
                                dk[base + c] = inner;
                            }
                            dv[c] += ge * t;
                        }
                    }
                }
                self.accumulate(grads, *q, || Tensor::new(qv.shape().to_vec(), dq).unwrap());
                if !dk.is_empty() {
                    self.accumulate(grads, *keys_proj, || Tensor::new(kv.shape().to_vec(), dk).unwrap());
                }
                self.accumulate(grads, *v, || Tensor::vector(dv));
            }
            Op::SoftmaxRows(e) => {
                let n = out.last_dim();
                self.accumulate(grads, *e, || {
                    let mut de = Vec::with_capacity(out.len());
                    for (wrow, grow) in out.data().chunks(n).zip(g.data().chunks(n)) {
                        let inner: f64 = wrow.iter().zip(grow).map(|(w, gg)| w * gg).sum();
                        de.extend(wrow.iter().zip(grow).map(|(w, gg)| w * (gg - inner)));
                    }
                    Tensor::new(out.shape().to_vec(), de).unwrap()
                });
            }
            Op::WeightedSum { weights, keys } => {
                let (wv, kv) = (self.value(*weights), self.value(*keys));
                let (b, l, k) = (kv.shape()[0], kv.shape()[1], kv.shape()[2]);
                self.accumulate(grads, *weights, || {
                    let mut dw = vec![0.0; b * l];
                    for bi in 0..b {
                        let grow = &g.data()[bi * k..(bi + 1) * k];
                        for j in 0..l {
                            dw[bi * l + j] = dot(grow, &kv.data()[(bi * l + j) * k..(bi * l + j + 1) * k]);
                        }
                    }
                    Tensor::new(vec![b, l], dw).unwrap()
                });
                if self.needs(*keys) {
                    let dk = self.slot(grads, *keys).data_mut();
                    for bi in 0..b {
                        let grow = &g.data()[bi * k..(bi + 1) * k];
                        for j in 0..l {
                            let w = wv.data()[bi * l + j];
                            axpy(&mut dk[(bi * l + j) * k..(bi * l + j + 1) * k], w, grow);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let gs = g.data()[0];
                self.accumulate(grads, *a, || {
                    let mut t = Tensor::zeros(self.value(*a).shape());
                    t.fill(gs);
                    t
                });
            }
            Op::SurvivalNll { phi, outcomes } => {
                let pv = self.value(*phi);
                let h = pv.shape()[1];
                let scale = g.data()[0] / outcomes.len() as f64;
                self.accumulate(grads, *phi, || {
                    let mut d = vec![0.0; pv.len()];
                    for (bi, o) in outcomes.iter().enumerate() {
                        let row = &pv.data()[bi * h..(bi + 1) * h];
                        let drow = &mut d[bi * h..(bi + 1) * h];
                        let t = o.t as usize;
                        for j in 0..t {
                            let hz = math::sigmoid(row[j]);
                            if !(HAZARD_FLOOR..=HAZARD_CEIL).contains(&hz) {
                                continue;
                            }
                            // d/dφ of -log(1-σ) is σ; of -log σ is σ - 1.
                            drow[j] = if j + 1 == t && o.event { hz - 1.0 } else { hz } * scale;
                        }
                    }
                    Tensor::new(pv.shape().to_vec(), d).unwrap()
                });
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn scaled(t: &Tensor, s: f64) -> Tensor {
    let data = t.data().iter().map(|v| v * s).collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}
