use std::collections::HashMap;

use super::tensor::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn node_id(self) -> usize {
        self.0
    }
}

/// Differentiable operation whose backward is supplied from outside the tape.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient buffer per input, each the size of that input.
    fn backward(&self, inputs: &[&[f64]], output: &[f64], grad_out: &[f64])
        -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Relu,
    Square,
    Exp,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

/// How an operand maps onto the output of a broadcasting op.
#[derive(Debug, Clone)]
enum Bcast {
    Same,
    /// Operand repeats every `n` output elements.
    Cycle(usize),
    General(Vec<usize>),
}

impl Bcast {
    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Cycle(n) => i % n,
            Bcast::General(map) => map[i],
        }
    }
}

enum Op {
    Leaf,
    Param,
    Binary {
        kind: Binary,
        a: Var,
        b: Var,
        ma: Bcast,
        mb: Bcast,
    },
    Unary(Unary, Var),
    Scale(Var, f64),
    MatMul {
        a: Var,
        b: Var,
        rows: usize,
        inner: usize,
        cols: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Select {
        src: Var,
        outer: usize,
        len: usize,
        inner: usize,
        index: usize,
    },
    Stack {
        parts: Vec<Var>,
        outer: usize,
        inner: usize,
    },
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients of one backward pass, indexed by node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Tape of recorded operations. Nodes are appended in evaluation order, so
/// the node list is always a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    param_names: Vec<(String, Var)>,
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape is consistent")
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Leaf whose gradient is reported through [`Gradients`].
    pub fn input(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, requires_grad)
    }

    /// Binds a parameter to this graph. Repeated calls return the same node,
    /// so every use of the parameter accumulates onto one leaf.
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = set.get(id);
        let v = self.push(
            p.value.shape().to_vec(),
            p.value.data().to_vec(),
            Op::Param,
            p.requires_grad,
        );
        self.params.insert(id, v);
        self.param_names.push((p.name.clone(), v));
        v
    }

    /// Parameters bound so far, by name.
    pub fn registered_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.param_names.iter().map(|(n, v)| (n.as_str(), *v))
    }

    fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Bcast, Bcast)> {
        if a == b {
            return Ok((a.to_vec(), Bcast::Same, Bcast::Same));
        }
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x == y || y == 1 {
                out.push(x);
            } else if x == 1 {
                out.push(y);
            } else {
                return Err(Error::dim(op, a, b));
            }
        }
        let map = |p: &[usize], orig: &[usize]| -> Bcast {
            if p == out.as_slice() {
                return Bcast::Same;
            }
            let n: usize = orig.iter().product();
            // Suffix match after dropping leading size-1 dims.
            let k = orig.iter().position(|&d| d != 1).unwrap_or(orig.len());
            let core = &orig[k..];
            if out.ends_with(core) {
                return Bcast::Cycle(n.max(1));
            }
            let mut strides = vec![0usize; rank];
            let mut s = 1;
            for i in (0..rank).rev() {
                strides[i] = if p[i] == 1 { 0 } else { s };
                s *= p[i];
            }
            let total: usize = out.iter().product();
            let mut m = Vec::with_capacity(total);
            let mut idx = vec![0usize; rank];
            for _ in 0..total {
                m.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
                for d in (0..rank).rev() {
                    idx[d] += 1;
                    if idx[d] < out[d] {
                        break;
                    }
                    idx[d] = 0;
                }
            }
            Bcast::General(m)
        };
        let ma = map(&pa, a);
        let mb = map(&pb, b);
        Ok((out, ma, mb))
    }

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        };
        let (shape, ma, mb) = Self::broadcast(name, self.shape(a), self.shape(b))?;
        let n: usize = shape.iter().product();
        let (va, vb) = (self.value(a), self.value(b));
        let mut value = vec![0.0; n];
        macro_rules! fill {
            ($f:expr) => {
                each_bcast(n, &ma, &mb, |i, ia, ib| value[i] = $f(va[ia], vb[ib]))
            };
        }
        match kind {
            Binary::Add => fill!(|x: f64, y: f64| x + y),
            Binary::Sub => fill!(|x: f64, y: f64| x - y),
            Binary::Mul => fill!(|x: f64, y: f64| x * y),
            Binary::Div => fill!(|x: f64, y: f64| x / y),
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(shape, value, Op::Binary { kind, a, b, ma, mb }, ng))
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

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Div, a, b)
    }

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Relu => |x| x.max(0.0),
            Unary::Square => |x| x * x,
            Unary::Exp => f64::exp,
            Unary::Tanh => f64::tanh,
        };
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a);
        self.push(shape, value, Op::Unary(kind, a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(Unary::Relu, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).iter().map(|&x| x * c).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(a);
        self.push(shape, value, Op::Scale(a, c), ng)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a[..., k] · b[k, n] -> [..., n]`; leading axes of `a` are flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let inner = sb[0];
        let cols = sb[1];
        let rows = if inner == 0 {
            sa[..sa.len() - 1].iter().product()
        } else {
            self.value(a).len() / inner
        };
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(cols);
        let mut value = vec![0.0; rows * cols];
        gemm(
            rows,
            inner,
            cols,
            self.value(a),
            false,
            self.value(b),
            false,
            &mut value,
        );
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            shape,
            value,
            Op::MatMul {
                a,
                b,
                rows,
                inner,
                cols,
            },
            ng,
        ))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let c = *sx.last().unwrap_or(&0);
        if c == 0 {
            return Err(Error::Shape("layer_norm over an empty channel axis".into()));
        }
        if self.shape(gain) != [c] {
            return Err(Error::dim("layer_norm gain", &sx, self.shape(gain)));
        }
        if self.shape(bias) != [c] {
            return Err(Error::dim("layer_norm bias", &sx, self.shape(bias)));
        }
        let xs = self.value(x);
        let (g, b) = (self.value(gain), self.value(bias));
        let rows = xs.len() / c;
        let mut xhat = vec![0.0; xs.len()];
        let mut rstd = vec![0.0; rows];
        let mut value = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                value[r * c + j] = h * g[j] + b[j];
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            sx,
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Picks `index` along `axis`, removing that axis.
    pub fn select(&mut self, src: Var, axis: usize, index: usize) -> Result<Var> {
        let s = self.shape(src).to_vec();
        if axis >= s.len() {
            return Err(Error::Shape(format!("select axis {axis} on shape {s:?}")));
        }
        if index >= s[axis] {
            return Err(Error::Index {
                what: "select index",
                index,
                len: s[axis],
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let len = s[axis];
        let v = self.value(src);
        let mut value = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * len + index) * inner;
            value.extend_from_slice(&v[base..base + inner]);
        }
        let mut shape = s.clone();
        shape.remove(axis);
        let ng = self.needs(src);
        Ok(self.push(
            shape,
            value,
            Op::Select {
                src,
                outer,
                len,
                inner,
                index,
            },
            ng,
        ))
    }

    /// Stacks equally shaped parts along a new `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("stack of zero tensors".into()))?;
        let s = self.shape(*first).to_vec();
        if axis > s.len() {
            return Err(Error::Shape(format!("stack axis {axis} on shape {s:?}")));
        }
        for p in parts {
            if self.shape(*p) != s.as_slice() {
                return Err(Error::dim("stack", &s, self.shape(*p)));
            }
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis..].iter().product();
        let mut value = Vec::with_capacity(outer * inner * parts.len());
        for o in 0..outer {
            for p in parts {
                value.extend_from_slice(&self.value(*p)[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = s;
        shape.insert(axis, parts.len());
        let ng = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(
            shape,
            value,
            Op::Stack {
                parts: parts.to_vec(),
                outer,
                inner,
            },
            ng,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(a).len() {
            return Err(Error::dim("reshape", self.shape(a), shape));
        }
        let value = self.value(a).to_vec();
        let ng = self.needs(a);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let ng = self.needs(a);
        self.push(Vec::new(), vec![s], Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let ng = self.needs(a);
        self.push(Vec::new(), vec![m], Op::Mean(a), ng)
    }

    /// Mean squared difference between `pred` and `target`.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Records a custom op whose forward value `out` the caller already computed.
    pub fn custom(&mut self, inputs: &[Var], out: Tensor, op: Box<dyn CustomOp>) -> Var {
        let ng = inputs.iter().any(|v| self.needs(*v));
        let shape = out.shape().to_vec();
        self.push(
            shape,
            out.into_data(),
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            ng,
        )
    }

    /// Runs reverse accumulation from the scalar `loss` and returns the
    /// gradient of every node that depends on a differentiable leaf.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                ln.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Accumulates d`loss`/dθ into the gradient slot of every bound parameter
    /// with `requires_grad`. Calling this twice without zeroing adds twice.
    pub fn backward(&self, loss: Var, params: &mut ParamSet) -> Result<()> {
        let grads = self.gradients(loss)?;
        let mut bound: Vec<(ParamId, Var)> = self.params.iter().map(|(k, v)| (*k, *v)).collect();
        bound.sort();
        for (id, v) in bound {
            if !params.get(id).requires_grad {
                continue;
            }
            match grads.get(v) {
                Some(g) => params.accumulate_grad(id, g),
                None => {
                    let zeros = vec![0.0; params.get(id).value.numel()];
                    params.accumulate_grad(id, &zeros);
                }
            }
        }
        Ok(())
    }

    fn backward_node(
        &self,
        node: &Node,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) -> Result<()> {
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Binary { kind, a, b, ma, mb } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let n = g.len();
                if self.needs(*a) {
                    let ga = slot(grads, *a, va.len());
                    match kind {
                        Binary::Add | Binary::Sub => {
                            each_bcast(n, ma, mb, |i, ia, _| ga[ia] += g[i])
                        }
                        Binary::Mul => each_bcast(n, ma, mb, |i, ia, ib| ga[ia] += g[i] * vb[ib]),
                        Binary::Div => each_bcast(n, ma, mb, |i, ia, ib| ga[ia] += g[i] / vb[ib]),
                    }
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, vb.len());
                    let y = &node.value;
                    match kind {
                        Binary::Add => each_bcast(n, ma, mb, |i, _, ib| gb[ib] += g[i]),
                        Binary::Sub => each_bcast(n, ma, mb, |i, _, ib| gb[ib] -= g[i]),
                        Binary::Mul => each_bcast(n, ma, mb, |i, ia, ib| gb[ib] += g[i] * va[ia]),
                        Binary::Div => {
                            each_bcast(n, ma, mb, |i, _, ib| gb[ib] -= g[i] * y[i] / vb[ib])
                        }
                    }
                }
            }
            Op::Unary(kind, a) => {
                let x = self.value(*a);
                let y = &node.value;
                let ga = slot(grads, *a, x.len());
                let it = ga.iter_mut().zip(g).zip(x.iter().zip(y));
                match kind {
                    Unary::Sigmoid => it.for_each(|((acc, gi), (_, yi))| *acc += gi * yi * (1.0 - yi)),
                    Unary::Relu => it.for_each(|((acc, gi), (xi, _))| {
                        if *xi > 0.0 {
                            *acc += gi
                        }
                    }),
                    Unary::Square => it.for_each(|((acc, gi), (xi, _))| *acc += gi * 2.0 * xi),
                    Unary::Exp => it.for_each(|((acc, gi), (_, yi))| *acc += gi * yi),
                    Unary::Tanh => it.for_each(|((acc, gi), (_, yi))| *acc += gi * (1.0 - yi * yi)),
                }
            }
            Op::Scale(a, c) => {
                let ga = slot(grads, *a, g.len());
                for (acc, gi) in ga.iter_mut().zip(g) {
                    *acc += gi * c;
                }
            }
            Op::MatMul {
                a,
                b,
                rows,
                inner,
                cols,
            } => {
                if self.needs(*a) {
                    let ga = slot(grads, *a, rows * inner);
                    // dA = dC · Bᵀ
                    gemm_acc(*rows, *cols, *inner, g, false, self.value(*b), true, ga);
                }
                if self.needs(*b) {
                    let gb = slot(grads, *b, inner * cols);
                    // dB = Aᵀ · dC
                    gemm_acc(*inner, *rows, *cols, self.value(*a), true, g, false, gb);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let c = self.value(*gain).len();
                let gv = self.value(*gain);
                let rows = xhat.len() / c;
                if self.needs(*gain) {
                    let gg = slot(grads, *gain, c);
                    for r in 0..rows {
                        for j in 0..c {
                            gg[j] += g[r * c + j] * xhat[r * c + j];
                        }
                    }
                }
                if self.needs(*bias) {
                    let gb = slot(grads, *bias, c);
                    for r in 0..rows {
                        for j in 0..c {
                            gb[j] += g[r * c + j];
                        }
                    }
                }
                if self.needs(*x) {
                    let gx = slot(grads, *x, xhat.len());
                    let mut dh = vec![0.0; c];
                    for r in 0..rows {
                        let (mut m1, mut m2) = (0.0, 0.0);
                        for j in 0..c {
                            dh[j] = g[r * c + j] * gv[j];
                            m1 += dh[j];
                            m2 += dh[j] * xhat[r * c + j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            gx[r * c + j] += rstd[r] * (dh[j] - m1 - xhat[r * c + j] * m2);
                        }
                    }
                }
            }
            Op::Select {
                src,
                outer,
                len,
                inner,
                index,
            } => {
                let gs = slot(grads, *src, outer * len * inner);
                for o in 0..*outer {
                    let base = (o * len + index) * inner;
                    for k in 0..*inner {
                        gs[base + k] += g[o * inner + k];
                    }
                }
            }
            Op::Stack {
                parts,
                outer,
                inner,
            } => {
                let n = parts.len();
                for (pi, p) in parts.iter().enumerate() {
                    if !self.needs(*p) {
                        continue;
                    }
                    let gp = slot(grads, *p, outer * inner);
                    for o in 0..*outer {
                        let base = (o * n + pi) * inner;
                        for k in 0..*inner {
                            gp[o * inner + k] += g[base + k];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                let ga = slot(grads, *a, g.len());
                for (acc, gi) in ga.iter_mut().zip(g) {
                    *acc += gi;
                }
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                let ga = slot(grads, *a, n);
                for acc in ga.iter_mut() {
                    *acc += g[0];
                }
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                let ga = slot(grads, *a, n);
                let s = g[0] / n.max(1) as f64;
                for acc in ga.iter_mut() {
                    *acc += s;
                }
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&[f64]> = inputs.iter().map(|v| self.value(*v)).collect();
                let gin = op.backward(&vals, &node.value, g)?;
                if gin.len() != inputs.len() {
                    return Err(Error::Contract(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        gin.len(),
                        inputs.len()
                    )));
                }
                for (v, gi) in inputs.iter().zip(gin) {
                    if !self.needs(*v) {
                        continue;
                    }
                    let n = self.value(*v).len();
                    if gi.len() != n {
                        return Err(Error::Contract(format!(
                            "custom op {} gradient has {} values, input has {n}",
                            op.name(),
                            gi.len()
                        )));
                    }
                    let acc = slot(grads, *v, n);
                    for (a, x) in acc.iter_mut().zip(gi) {
                        *a += x;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Calls `f(i, ia, ib)` for every output index with the operand indices it
/// reads, specialised so the common layouts compile to plain loops.
#[inline(always)]
fn each_bcast(n: usize, ma: &Bcast, mb: &Bcast, mut f: impl FnMut(usize, usize, usize)) {
    match (ma, mb) {
        (Bcast::Same, Bcast::Same) => (0..n).for_each(|i| f(i, i, i)),
        (Bcast::Same, Bcast::Cycle(k)) => {
            for base in (0..n).step_by(*k) {
                (0..*k).for_each(|j| f(base + j, base + j, j));
            }
        }
        (Bcast::Cycle(k), Bcast::Same) => {
            for base in (0..n).step_by(*k) {
                (0..*k).for_each(|j| f(base + j, j, base + j));
            }
        }
        _ => (0..n).for_each(|i| f(i, ma.index(i), mb.index(i))),
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64]) {
    raw_gemm(m, k, n, a, ta, b, tb, c, 0.0);
}

#[allow(clippy::too_many_arguments)]
fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, c: &mut [f64]) {
    raw_gemm(m, k, n, a, ta, b, tb, c, 1.0);
}

/// `c = a·b + beta·c` where `a` is m×k and `b` is k×n after optional transposition.
#[allow(clippy::too_many_arguments)]
fn raw_gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe exactly the m×k, k×n and m×n extents of the
    // slices, whose lengths are asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
