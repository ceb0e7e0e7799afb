//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value plus whatever the
//! backward pass needs. [`Graph::backward`] walks the tape in reverse and
//! accumulates vector-Jacobian products into a [`Gradients`] table. Nodes
//! are created in topological order by construction, so the reverse walk
//! needs no sorting.

use indexmap::IndexMap;

use super::lstm::{self, Dims, LstmState};
use super::norm;
use super::params::ParamStore;
use super::real::{matmul_into, matmul_nt_into, matmul_tn_acc};
use super::{inverse_permutation, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<R> {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    Lstm { x: Var, w_ih: Var, w_hh: Var, bias: Var, dims: Dims, cache: Option<lstm::Cache<R>> },
    GroupNorm { x: Var, gamma: Var, beta: Var, groups: usize, cache: Option<norm::Cache<R>> },
    MeanAxis { x: Var, outer: usize, count: usize, inner: usize },
    RepeatAxis { x: Var, outer: usize, count: usize, inner: usize },
    Permute { x: Var, perm: Vec<usize> },
    Reshape { x: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: R },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Sum { x: Var },
    Mse { pred: Var, target: Var },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    requires_grad: bool,
}

/// Recording of one forward evaluation.
pub struct Graph<R> {
    nodes: Vec<Node<R>>,
    grad_enabled: bool,
    params: IndexMap<String, Var>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar (or seeded) output, indexed by node.
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
    params: IndexMap<String, Var>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, var: Var) -> Option<&Tensor<R>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of a parameter bound with [`Graph::param`]. Parameters that
    /// were bound but received no gradient flow get a zero tensor.
    pub fn param(&self, name: &str) -> Option<&Tensor<R>> {
        self.params.get(name).and_then(|&v| self.get(v))
    }

    /// Takes out the per-parameter gradients, in binding order.
    pub fn into_params(mut self) -> IndexMap<String, Tensor<R>> {
        let params = std::mem::take(&mut self.params);
        params
            .into_iter()
            .filter_map(|(name, v)| self.grads[v.0].take().map(|g| (name, g)))
            .collect()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true, params: IndexMap::new() }
    }

    /// A graph that keeps no backward caches; use [`Graph::release`] to drop
    /// intermediate values as soon as they are consumed.
    pub fn inference() -> Self {
        Self { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Frees a consumed intermediate in inference mode; no-op otherwise.
    pub fn release(&mut self, v: Var) {
        if !self.grad_enabled {
            self.nodes[v.0].value = Tensor::zeros(&[0]);
        }
    }

    /// Constant input; no gradient is tracked.
    pub fn input(&mut self, value: Tensor<R>) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        let rg = self.grad_enabled;
        self.push_unchecked(value, Op::Leaf, rg)
    }

    /// Binds a named parameter from `store` (once per graph).
    pub fn param(&mut self, store: &ParamStore<R>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))?.clone();
        let v = self.leaf(value);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn push_unchecked(&mut self, value: Tensor<R>, op: Op<R>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<R>, op: Op<R>, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: name, step: None });
        }
        let rg = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape { op, left: self.shape(a).to_vec(), right: self.shape(b).to_vec() });
        }
        Ok(())
    }

    /// `y = x W + b` over the trailing axis; `W` is `d_in x d_out`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] {
            return Err(Error::Shape { op: "affine", left: xs, right: ws });
        }
        let (d_in, d_out) = (ws[0], ws[1]);
        if let Some(b) = b {
            if self.shape(b) != [d_out] {
                return Err(Error::Shape { op: "affine bias", left: self.shape(b).to_vec(), right: vec![d_out] });
            }
        }
        let rows = self.value(x).len() / d_in.max(1);
        let mut out = vec![R::zero(); rows * d_out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_exact_mut(d_out) {
                row.copy_from_slice(bias);
            }
        }
        let beta = if b.is_some() { R::one() } else { R::zero() };
        matmul_into(rows, d_in, d_out, self.value(x).data(), self.value(w).data(), beta, &mut out);
        let mut shape = xs;
        *shape.last_mut().unwrap() = d_out;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push("affine", Tensor::new(shape, out)?, Op::Affine { x, w, b }, &inputs)
    }

    /// Unidirectional LSTM over `x: [batch, steps, input]`.
    ///
    /// `w_ih` is `4H x D`, `w_hh` is `4H x H`, `bias` is `4H`.
    pub fn lstm(&mut self, x: Var, w_ih: Var, w_hh: Var, bias: Var, state: Option<&LstmState<R>>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let wi = self.shape(w_ih).to_vec();
        if xs.len() != 3 || wi.len() != 2 || wi[1] != xs[2] || !wi[0].is_multiple_of(4) {
            return Err(Error::Shape { op: "lstm input", left: xs, right: wi });
        }
        let hidden = wi[0] / 4;
        if self.shape(w_hh) != [4 * hidden, hidden] {
            return Err(Error::Shape { op: "lstm w_hh", left: self.shape(w_hh).to_vec(), right: vec![4 * hidden, hidden] });
        }
        if self.shape(bias) != [4 * hidden] {
            return Err(Error::Shape { op: "lstm bias", left: self.shape(bias).to_vec(), right: vec![4 * hidden] });
        }
        let dims = Dims { batch: xs[0], steps: xs[1], input: xs[2], hidden };
        let (out, cache) = lstm::forward(
            dims,
            self.value(x).data(),
            self.value(w_ih).data(),
            self.value(w_hh).data(),
            self.value(bias).data(),
            state,
            self.grad_enabled,
        )?;
        let value = Tensor::new(vec![dims.batch, dims.steps, hidden], out)?;
        self.push("lstm", value, Op::Lstm { x, w_ih, w_hh, bias, dims, cache }, &[x, w_ih, w_hh, bias])
    }

    /// Group normalization of the trailing axis, then per-channel affine.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: R) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let c = *xs.last().ok_or(Error::Invalid { op: "group_norm", msg: "scalar input".into() })?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::Invalid { op: "group_norm", msg: format!("{c} channels not divisible into {groups} groups") });
        }
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::Shape { op: "group_norm affine", left: self.shape(gamma).to_vec(), right: vec![c] });
        }
        let (out, cache) = norm::forward(
            self.value(x).data(),
            c,
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
            eps,
            self.grad_enabled,
        );
        self.push("group_norm", Tensor::new(xs, out)?, Op::GroupNorm { x, gamma, beta, groups, cache }, &[x, gamma, beta])
    }

    fn split_axis(&self, op: &'static str, shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= shape.len() {
            return Err(Error::Invalid { op, msg: format!("axis {axis} out of range for shape {shape:?}") });
        }
        let outer = shape[..axis].iter().product();
        let inner = shape[axis + 1..].iter().product();
        Ok((outer, shape[axis], inner))
    }

    /// Arithmetic mean over `axis`, which is removed.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let (outer, count, inner) = self.split_axis("mean_axis", &xs, axis)?;
        if count == 0 {
            return Err(Error::Invalid { op: "mean_axis", msg: "empty set".into() });
        }
        let data = self.value(x).data();
        let mut out = vec![R::zero(); outer * inner];
        let scale = R::one() / R::from_f64(count as f64);
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for k in 0..count {
                let src = &data[(o * count + k) * inner..(o * count + k + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
            for d in dst.iter_mut() {
                *d = *d * scale;
            }
        }
        let mut shape = xs;
        shape.remove(axis);
        self.push("mean_axis", Tensor::new(shape, out)?, Op::MeanAxis { x, outer, count, inner }, &[x])
    }

    /// Inserts a new axis of length `count` at `axis` by repetition.
    pub fn repeat_axis(&mut self, x: Var, axis: usize, count: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if axis > xs.len() {
            return Err(Error::Invalid { op: "repeat_axis", msg: format!("axis {axis} out of range for shape {xs:?}") });
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis..].iter().product();
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            for _ in 0..count {
                out.extend_from_slice(&data[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = xs;
        shape.insert(axis, count);
        self.push("repeat_axis", Tensor::new(shape, out)?, Op::RepeatAxis { x, outer, count, inner }, &[x])
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let value = self.value(x).permuted(perm)?;
        self.push("permute", value, Op::Permute { x, perm: perm.to_vec() }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push("reshape", value, Op::Reshape { x }, &[x])
    }

    /// Trailing-axis concatenation, `a` first.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.is_empty() || sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::Shape { op: "concat_last", left: sa, right: sb });
        }
        let (ha, hb) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let rows = if ha > 0 { da.len() / ha } else { db.len() / hb.max(1) };
        let mut out = Vec::with_capacity(rows * (ha + hb));
        for r in 0..rows {
            out.extend_from_slice(&da[r * ha..(r + 1) * ha]);
            out.extend_from_slice(&db[r * hb..(r + 1) * hb]);
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = ha + hb;
        self.push("concat_last", Tensor::new(shape, out)?, Op::Concat { a, b }, &[a, b])
    }

    fn zip_with(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(R, R) -> R, op: Op<R>) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: R) -> Result<Var> {
        let value = self.value(x).map(|v| v * factor);
        self.push("scale", value, Op::Scale { x, factor }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| v.tanh());
        self.push("tanh", value, Op::Tanh { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| R::one() / (R::one() + (-v).exp()));
        self.push("sigmoid", value, Op::Sigmoid { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::Sum { x }, &[x])
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape("mse", pred, target)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        if p.is_empty() {
            return Err(Error::Invalid { op: "mse", msg: "empty input".into() });
        }
        let total = p.iter().zip(t).fold(R::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        let value = Tensor::scalar(total / R::from_f64(p.len() as f64));
        self.push("mse", value, Op::Mse { pred, target }, &[pred, target])
    }

    /// Reverse pass seeded with ones at `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<R>> {
        let seed = Tensor::full(self.value(output).shape(), R::one());
        self.backward_with(output, seed)
    }

    /// Reverse pass seeded with an explicit cotangent for `output`.
    pub fn backward_with(&self, output: Var, seed: Tensor<R>) -> Result<Gradients<R>> {
        if !self.grad_enabled {
            return Err(Error::Invalid { op: "backward", msg: "graph was recorded in inference mode".into() });
        }
        if seed.shape() != self.shape(output) {
            return Err(Error::Shape { op: "backward seed", left: seed.shape().to_vec(), right: self.shape(output).to_vec() });
        }
        let mut grads: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (before, rest) = grads.split_at_mut(i);
            let Some(g) = rest[0].as_ref() else { continue };
            self.backward_node(node, g, before)?;
        }
        for (name, &v) in &self.params {
            if grads[v.0].is_none() && self.nodes[v.0].requires_grad {
                log::trace!("parameter {name} received no gradient");
                grads[v.0] = Some(Tensor::zeros(self.shape(v)));
            }
        }
        Ok(Gradients { grads, params: self.params.clone() })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node<R>, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (d_in, d_out) = (self.shape(*w)[0], self.shape(*w)[1]);
                let xv = self.value(*x);
                let rows = xv.len() / d_in.max(1);
                if self.wants(*x) {
                    let mut dx = vec![R::zero(); rows * d_in];
                    matmul_nt_into(rows, d_out, d_in, gd, self.value(*w).data(), R::zero(), &mut dx);
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if self.wants(*w) {
                    let mut dw = vec![R::zero(); d_in * d_out];
                    matmul_tn_acc(d_in, rows, d_out, xv.data(), gd, &mut dw);
                    accumulate(grads, *w, Tensor::new(vec![d_in, d_out], dw)?);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![R::zero(); d_out];
                        for row in gd.chunks_exact(d_out) {
                            for (acc, &v) in db.iter_mut().zip(row) {
                                *acc = *acc + v;
                            }
                        }
                        accumulate(grads, *b, Tensor::new(vec![d_out], db)?);
                    }
                }
            }
            Op::Lstm { x, w_ih, w_hh, bias, dims, cache } => {
                let cache = cache.as_ref().expect("lstm cache present when grad is enabled");
                let lg = lstm::backward(
                    *dims,
                    self.value(*x).data(),
                    self.value(*w_ih).data(),
                    self.value(*w_hh).data(),
                    node.value.data(),
                    cache,
                    gd,
                );
                for (v, data) in [(*x, lg.x), (*w_ih, lg.w_ih), (*w_hh, lg.w_hh), (*bias, lg.bias)] {
                    if self.wants(v) {
                        accumulate(grads, v, Tensor::new(self.shape(v).to_vec(), data)?);
                    }
                }
            }
            Op::GroupNorm { x, gamma, beta, groups, cache } => {
                let cache = cache.as_ref().expect("group_norm cache present when grad is enabled");
                let c = self.shape(*gamma)[0];
                let (dx, dg, db) = norm::backward(c, *groups, self.value(*gamma).data(), cache, gd);
                for (v, data) in [(*x, dx), (*gamma, dg), (*beta, db)] {
                    if self.wants(v) {
                        accumulate(grads, v, Tensor::new(self.shape(v).to_vec(), data)?);
                    }
                }
            }
            Op::MeanAxis { x, outer, count, inner } => {
                let scale = R::one() / R::from_f64(*count as f64);
                let mut dx = Vec::with_capacity(outer * count * inner);
                for o in 0..*outer {
                    for _ in 0..*count {
                        dx.extend(gd[o * inner..(o + 1) * inner].iter().map(|&v| v * scale));
                    }
                }
                accumulate(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::RepeatAxis { x, outer, count, inner } => {
                let mut dx = vec![R::zero(); outer * inner];
                for o in 0..*outer {
                    let dst = &mut dx[o * inner..(o + 1) * inner];
                    for k in 0..*count {
                        let src = &gd[(o * count + k) * inner..(o * count + k + 1) * inner];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(self.shape(*x).to_vec(), dx)?);
            }
            Op::Permute { x, perm } => {
                accumulate(grads, *x, g.permuted(&inverse_permutation(perm))?);
            }
            Op::Reshape { x } => {
                accumulate(grads, *x, g.clone().reshaped(self.shape(*x).to_vec())?);
            }
            Op::Concat { a, b } => {
                let ha = *self.shape(*a).last().unwrap();
                let hb = *self.shape(*b).last().unwrap();
                let rows = gd.len() / (ha + hb).max(1);
                let mut da = Vec::with_capacity(rows * ha);
                let mut db = Vec::with_capacity(rows * hb);
                for row in gd.chunks_exact(ha + hb) {
                    da.extend_from_slice(&row[..ha]);
                    db.extend_from_slice(&row[ha..]);
                }
                if self.wants(*a) {
                    accumulate(grads, *a, Tensor::new(self.shape(*a).to_vec(), da)?);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, Tensor::new(self.shape(*b).to_vec(), db)?);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let d = gd.iter().zip(vb.data()).map(|(&g, &y)| g * y).collect();
                    accumulate(grads, *a, Tensor::new(va.shape().to_vec(), d)?);
                }
                if self.wants(*b) {
                    let d = gd.iter().zip(va.data()).map(|(&g, &x)| g * x).collect();
                    accumulate(grads, *b, Tensor::new(vb.shape().to_vec(), d)?);
                }
            }
            Op::Scale { x, factor } => {
                accumulate(grads, *x, g.map(|v| v * *factor));
            }
            Op::Tanh { x } => {
                let d = gd.iter().zip(node.value.data()).map(|(&g, &y)| g * (R::one() - y * y)).collect();
                accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), d)?);
            }
            Op::Sigmoid { x } => {
                let d = gd.iter().zip(node.value.data()).map(|(&g, &y)| g * y * (R::one() - y)).collect();
                accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), d)?);
            }
            Op::Sum { x } => {
                accumulate(grads, *x, Tensor::full(self.shape(*x), gd[0]));
            }
            Op::Mse { pred, target } => {
                let (p, t) = (self.value(*pred), self.value(*target));
                let k = gd[0] * R::from_f64(2.0 / p.len() as f64);
                let diff: Vec<R> = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b) * k).collect();
                if self.wants(*target) {
                    let neg = diff.iter().map(|&v| -v).collect();
                    accumulate(grads, *target, Tensor::new(t.shape().to_vec(), neg)?);
                }
                if self.wants(*pred) {
                    accumulate(grads, *pred, Tensor::new(p.shape().to_vec(), diff)?);
                }
            }
        }
        Ok(())
    }
}

fn accumulate<R: Real>(grads: &mut [Option<Tensor<R>>], v: Var, delta: Tensor<R>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, &d) in existing.data_mut().iter_mut().zip(delta.data()) {
                *a = *a + d;
            }
        }
        slot @ None => *slot = Some(delta),
    }
}
