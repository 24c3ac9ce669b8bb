use super::{numel_of, strides_of, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy)]
enum Unary {
    Neg,
    Exp,
    Log,
    Cos,
    Sqrt,
    Silu,
    Sigmoid,
    Square,
    ClampMin(f64),
    Affine { mul: f64, add: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Reduce {
    Sum,
    Mean,
    Max,
    Min,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Binary(Binary, Var, Var),
    Unary(Unary, Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { src: Var, axis: usize, start: usize },
    Reduce { kind: Reduce, src: Var, axis: usize, arg: Vec<usize> },
    SumAll(Var),
    Softmax(Var, usize),
    Norm(Var),
    MaskedFill(Var, Vec<bool>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Record of executed ops, in execution order.
///
/// Nodes only reference earlier nodes, so the vector order is a topological
/// order and a single reverse sweep visits each node once.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

/// Right-aligned broadcast of two shapes.
struct Broadcast {
    out: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

impl Broadcast {
    fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self, TensorError> {
        let rank = a.len().max(b.len());
        let pad = |s: &[usize]| -> Vec<usize> {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(a), pad(b));
        let mut out = Vec::with_capacity(rank);
        for ax in 0..rank {
            let (da, db) = (pa[ax], pb[ax]);
            let d = if da == db || db == 1 {
                da
            } else if da == 1 {
                db
            } else {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                });
            };
            out.push(d);
        }
        let mask = |p: &[usize]| -> Vec<usize> {
            let s = strides_of(p);
            p.iter().zip(s).map(|(&d, st)| if d == 1 { 0 } else { st }).collect()
        };
        Ok(Self {
            a_strides: mask(&pa),
            b_strides: mask(&pb),
            out,
        })
    }

    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = numel_of(&self.out);
        if n == 0 {
            return;
        }
        let rank = self.out.len();
        let mut idx = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..n {
            f(o, ia, ib);
            let mut ax = rank;
            while ax > 0 {
                ax -= 1;
                idx[ax] += 1;
                ia += self.a_strides[ax];
                ib += self.b_strides[ax];
                if idx[ax] < self.out[ax] {
                    break;
                }
                ia -= self.a_strides[ax] * self.out[ax];
                ib -= self.b_strides[ax] * self.out[ax];
                idx[ax] = 0;
            }
        }
    }
}

/// (outer, len, inner) decomposition of a shape around `axis`.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel_of(&shape[..axis]);
    let inner = numel_of(&shape[axis + 1..]);
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn permuted_offsets(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    // offsets into the source for each flat output index
    let in_strides = strides_of(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let n = numel_of(shape);
    let rank = shape.len();
    let mut offs = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offs.push(off);
        let mut ax = rank;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            off += in_strides[axes[ax]];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= in_strides[axes[ax]] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    offs
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Registers a leaf; gradients are accumulated for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf, present after a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.leaf_grads {
            *g = None;
        }
    }

    // ----- elementwise binary -----

    fn binary(&mut self, kind: Binary, a: Var, b: Var, op: &'static str) -> Result<Var, TensorError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let value = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else {
            let bc = Broadcast::new(op, va.shape(), vb.shape())?;
            let mut data = vec![0.0; numel_of(&bc.out)];
            let (da, db) = (va.data(), vb.data());
            bc.for_each(|o, ia, ib| data[o] = f(da[ia], db[ib]));
            Tensor::new(bc.out, data)?
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Add, a, b, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Sub, a, b, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Mul, a, b, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(Binary::Div, a, b, "div")
    }

    // ----- elementwise unary -----

    fn unary(&mut self, kind: Unary, a: Var) -> Var {
        let f = |x: f64| match kind {
            Unary::Neg => -x,
            Unary::Exp => x.exp(),
            Unary::Log => x.ln(),
            Unary::Cos => x.cos(),
            Unary::Sqrt => x.sqrt(),
            Unary::Silu => x * sigmoid(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Square => x * x,
            Unary::ClampMin(c) => x.max(c),
            Unary::Affine { mul, add } => mul * x + add,
        };
        let value = self.nodes[a.0].value.map(f);
        let rg = self.rg(a);
        self.push(value, Op::Unary(kind, a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Unary::Log, a)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        self.unary(Unary::Cos, a)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(Unary::Sqrt, a)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(Unary::Silu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(Unary::Square, a)
    }

    /// `max(x, floor)`; gradient passes only where `x > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(Unary::ClampMin(floor), a)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(Unary::Affine { mul: factor, add: 0.0 }, a)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(Unary::Affine { mul: 1.0, add: c }, a)
    }

    // ----- linear algebra -----

    /// `[.., m, k] x [k, n] -> [.., m, n]`, or batched `[B, m, k] x [B, k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sb.len() == 2 && !sa.is_empty() {
            let k = *sa.last().unwrap();
            if k != sb[0] {
                return Err(mismatch());
            }
            let n = sb[1];
            let rows = numel_of(&sa) / k.max(1);
            let rows = if k == 0 { numel_of(&sa[..sa.len() - 1]) } else { rows };
            let mut out = vec![0.0; rows * n];
            let (da, db) = (self.value(a).data(), self.value(b).data());
            gemm(da, db, &mut out, rows, k, n);
            let mut shape = sa[..sa.len() - 1].to_vec();
            shape.push(n);
            let rg = self.rg(a) || self.rg(b);
            let value = Tensor::new(shape, out)?;
            Ok(self.push(value, Op::MatMul(a, b), rg))
        } else if sa.len() == 3 && sb.len() == 3 {
            let (bt, m, k) = (sa[0], sa[1], sa[2]);
            if sb[0] != bt || sb[1] != k {
                return Err(mismatch());
            }
            let n = sb[2];
            let mut out = vec![0.0; bt * m * n];
            let (da, db) = (self.value(a).data(), self.value(b).data());
            for s in 0..bt {
                gemm(
                    &da[s * m * k..(s + 1) * m * k],
                    &db[s * k * n..(s + 1) * k * n],
                    &mut out[s * m * n..(s + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
            let rg = self.rg(a) || self.rg(b);
            let value = Tensor::new(vec![bt, m, n], out)?;
            Ok(self.push(value, Op::BatchMatMul(a, b), rg))
        } else {
            Err(mismatch())
        }
    }

    // ----- shape ops -----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&x| x >= shape.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("axes {axes:?} are not a permutation for shape {shape:?}"),
            });
        }
        let offs = permuted_offsets(&shape, axes);
        let src = self.value(a).data();
        let data: Vec<f64> = offs.iter().map(|&o| src[o]).collect();
        let out_shape: Vec<usize> = axes.iter().map(|&x| shape[x]).collect();
        let rg = self.rg(a);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Permute(a, axes.to_vec()), rg))
    }

    /// Swaps the first two axes (pairwise transpose of an n×n×.. tensor).
    pub fn transpose_pairs(&mut self, a: Var) -> Result<Var, TensorError> {
        let rank = self.shape(a).len();
        let mut axes: Vec<usize> = (0..rank).collect();
        if rank < 2 {
            return Err(TensorError::InvalidAxis {
                op: "transpose_pairs",
                axis: 1,
                shape: self.shape(a).to_vec(),
            });
        }
        axes.swap(0, 1);
        self.permute(a, &axes)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                shape: base,
            });
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut data = Vec::with_capacity(numel_of(&out_shape));
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis] * inner;
                data.extend_from_slice(&self.value(p).data()[o * len..(o + 1) * len]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), rg))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::InvalidAxis { op: "slice", axis, shape });
        }
        let (outer, alen, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * alen * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(a);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Slice { src: a, axis, start }, rg))
    }

    /// Splits `axis` into `parts` equal pieces.
    pub fn split(&mut self, a: Var, parts: usize, axis: usize) -> Result<Vec<Var>, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis { op: "split", axis, shape });
        }
        if parts == 0 || shape[axis] % parts != 0 {
            return Err(TensorError::Invalid {
                op: "split",
                msg: format!("axis {axis} of {shape:?} not divisible into {parts} parts"),
            });
        }
        let len = shape[axis] / parts;
        (0..parts).map(|p| self.slice(a, axis, p * len, len)).collect()
    }

    // ----- reductions -----

    fn reduce(&mut self, kind: Reduce, a: Var, axis: usize, op: &'static str) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || (shape[axis] == 0 && matches!(kind, Reduce::Max | Reduce::Min | Reduce::Mean)) {
            return Err(TensorError::InvalidAxis { op, axis, shape });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        let mut arg = Vec::new();
        if matches!(kind, Reduce::Max | Reduce::Min) {
            arg = vec![0usize; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| src[(o * len + k) * inner + i];
                let slot = o * inner + i;
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let s: f64 = (0..len).map(at).sum();
                        data[slot] = if kind == Reduce::Mean { s / len as f64 } else { s };
                    }
                    Reduce::Max | Reduce::Min => {
                        // lowest index wins ties
                        let mut best = 0;
                        for k in 1..len {
                            let better = if kind == Reduce::Max { at(k) > at(best) } else { at(k) < at(best) };
                            if better {
                                best = k;
                            }
                        }
                        arg[slot] = best;
                        data[slot] = at(best);
                    }
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let rg = self.rg(a);
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(value, Op::Reduce { kind, src: a, axis, arg }, rg))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(Reduce::Sum, a, axis, "sum")
    }

    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(Reduce::Mean, a, axis, "mean")
    }

    pub fn max(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(Reduce::Max, a, axis, "max")
    }

    pub fn min(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        self.reduce(Reduce::Min, a, axis, "min")
    }

    /// Sum of every element as a rank-0 scalar.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::InvalidAxis { op: "softmax", axis, shape });
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * len + k) * inner + i;
                let m = (0..len).map(|k| src[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..len {
                    let e = (src[idx(k)] - m).exp();
                    data[idx(k)] = e;
                    z += e;
                }
                for k in 0..len {
                    data[idx(k)] /= z;
                }
            }
        }
        let rg = self.rg(a);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Softmax(a, axis), rg))
    }

    /// Euclidean norm over the last axis. The backward pass floors the norm at
    /// 1e-12 so a zero vector yields a zero (finite) gradient.
    pub fn norm(&mut self, a: Var) -> Result<Var, TensorError> {
        let shape = self.shape(a).to_vec();
        let Some(&last) = shape.last() else {
            return Err(TensorError::InvalidAxis { op: "norm", axis: 0, shape });
        };
        let src = self.value(a).data();
        let data: Vec<f64> = src
            .chunks(last.max(1))
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let data = if last == 0 { vec![0.0; numel_of(&shape[..shape.len() - 1])] } else { data };
        let rg = self.rg(a);
        let value = Tensor::new(shape[..shape.len() - 1].to_vec(), data)?;
        Ok(self.push(value, Op::Norm(a), rg))
    }

    /// Replaces entries where `mask` is true with `fill`.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], fill: f64) -> Result<Var, TensorError> {
        let v = self.value(a);
        if mask.len() != v.numel() {
            return Err(TensorError::ShapeMismatch {
                op: "masked_fill",
                lhs: v.shape().to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let data = v.data().iter().zip(mask).map(|(&x, &m)| if m { fill } else { x }).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::MaskedFill(a, mask.to_vec()), rg))
    }

    // ----- backward -----

    /// Reverse sweep from a scalar `loss`, accumulating into leaf gradients.
    /// Returns the number of nodes visited.
    pub fn backward(&mut self, loss: Var) -> Result<usize, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut visited = 0;
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            visited += 1;
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            if let Op::Leaf = op {
                let shape = self.nodes[id].value.shape().to_vec();
                match &mut self.leaf_grads[id] {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(Tensor::new(shape, g)?),
                }
                continue;
            }
            self.propagate(id, &op, &g, &mut grads);
        }
        Ok(visited)
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, b)| *a += b),
            slot => *slot = Some(contrib),
        }
    }

    fn propagate(&self, id: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[id].value;
        match *op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (da, db) = (va.data(), vb.data());
                let mut ga = vec![0.0; da.len()];
                let mut gb = vec![0.0; db.len()];
                let mut body = |o: usize, ia: usize, ib: usize| {
                    let go = g[o];
                    match kind {
                        Binary::Add => {
                            ga[ia] += go;
                            gb[ib] += go;
                        }
                        Binary::Sub => {
                            ga[ia] += go;
                            gb[ib] -= go;
                        }
                        Binary::Mul => {
                            ga[ia] += go * db[ib];
                            gb[ib] += go * da[ia];
                        }
                        Binary::Div => {
                            ga[ia] += go / db[ib];
                            gb[ib] -= go * da[ia] / (db[ib] * db[ib]);
                        }
                    }
                };
                if va.shape() == vb.shape() {
                    for o in 0..g.len() {
                        body(o, o, o);
                    }
                } else {
                    let bc = Broadcast::new("backward", va.shape(), vb.shape()).expect("shapes validated in forward");
                    bc.for_each(body);
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::Unary(kind, a) => {
                let x = self.value(a).data();
                let y = out.data();
                let gx: Vec<f64> = (0..x.len())
                    .map(|k| {
                        let d = match kind {
                            Unary::Neg => -1.0,
                            Unary::Exp => y[k],
                            Unary::Log => 1.0 / x[k],
                            Unary::Cos => -x[k].sin(),
                            Unary::Sqrt => 0.5 / y[k],
                            Unary::Silu => {
                                let s = sigmoid(x[k]);
                                s * (1.0 + x[k] * (1.0 - s))
                            }
                            Unary::Sigmoid => y[k] * (1.0 - y[k]),
                            Unary::Square => 2.0 * x[k],
                            Unary::ClampMin(c) => {
                                if x[k] > c {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Affine { mul, .. } => mul,
                        };
                        g[k] * d
                    })
                    .collect();
                self.accumulate(grads, a, gx);
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (k, n) = (vb.shape()[0], vb.shape()[1]);
                let rows = if k == 0 { numel_of(&va.shape()[..va.rank() - 1]) } else { va.numel() / k };
                if self.rg(a) {
                    let mut ga = vec![0.0; va.numel()];
                    gemm_bt(g, vb.data(), &mut ga, rows, n, k);
                    self.accumulate(grads, a, ga);
                }
                if self.rg(b) {
                    let mut gb = vec![0.0; vb.numel()];
                    gemm_at(va.data(), g, &mut gb, rows, k, n);
                    self.accumulate(grads, b, gb);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let (bt, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
                let n = vb.shape()[2];
                if self.rg(a) {
                    let mut ga = vec![0.0; va.numel()];
                    for s in 0..bt {
                        gemm_bt(
                            &g[s * m * n..(s + 1) * m * n],
                            &vb.data()[s * k * n..(s + 1) * k * n],
                            &mut ga[s * m * k..(s + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.accumulate(grads, a, ga);
                }
                if self.rg(b) {
                    let mut gb = vec![0.0; vb.numel()];
                    for s in 0..bt {
                        gemm_at(
                            &va.data()[s * m * k..(s + 1) * m * k],
                            &g[s * m * n..(s + 1) * m * n],
                            &mut gb[s * k * n..(s + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    self.accumulate(grads, b, gb);
                }
            }
            Op::Reshape(a) => self.accumulate(grads, a, g.to_vec()),
            Op::Permute(a, ref axes) => {
                let offs = permuted_offsets(self.shape(a), axes);
                let mut ga = vec![0.0; g.len()];
                for (o, &src) in offs.iter().enumerate() {
                    ga[src] += g[o];
                }
                self.accumulate(grads, a, ga);
            }
            Op::Concat(ref parts, axis) => {
                let (outer, _, inner) = axis_split(out.shape(), axis);
                let mut offset = 0;
                let total = out.shape()[axis] * inner;
                for &p in parts {
                    let len = self.shape(p)[axis] * inner;
                    if self.rg(p) {
                        let mut gp = Vec::with_capacity(outer * len);
                        for o in 0..outer {
                            let base = o * total + offset;
                            gp.extend_from_slice(&g[base..base + len]);
                        }
                        self.accumulate(grads, p, gp);
                    }
                    offset += len;
                }
            }
            Op::Slice { src, axis, start } => {
                let shape = self.shape(src);
                let (outer, alen, inner) = axis_split(shape, axis);
                let len = out.shape()[axis];
                let mut gs = vec![0.0; numel_of(shape)];
                for o in 0..outer {
                    let base = o * alen * inner + start * inner;
                    let gbase = o * len * inner;
                    gs[base..base + len * inner].copy_from_slice(&g[gbase..gbase + len * inner]);
                }
                self.accumulate(grads, src, gs);
            }
            Op::Reduce { kind, src, axis, ref arg } => {
                let shape = self.shape(src);
                let (outer, len, inner) = axis_split(shape, axis);
                let mut gs = vec![0.0; numel_of(shape)];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        match kind {
                            Reduce::Sum | Reduce::Mean => {
                                let scale = if kind == Reduce::Mean { 1.0 / len as f64 } else { 1.0 };
                                for k in 0..len {
                                    gs[(o * len + k) * inner + i] += g[slot] * scale;
                                }
                            }
                            Reduce::Max | Reduce::Min => {
                                gs[(o * len + arg[slot]) * inner + i] += g[slot];
                            }
                        }
                    }
                }
                self.accumulate(grads, src, gs);
            }
            Op::SumAll(a) => {
                let n = self.value(a).numel();
                self.accumulate(grads, a, vec![g[0]; n]);
            }
            Op::Softmax(a, axis) => {
                let (outer, len, inner) = axis_split(out.shape(), axis);
                let y = out.data();
                let mut gs = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..len {
                            gs[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                self.accumulate(grads, a, gs);
            }
            Op::Norm(a) => {
                let x = self.value(a).data();
                let last = *self.shape(a).last().unwrap();
                let y = out.data();
                let mut gs = vec![0.0; x.len()];
                for (r, &nv) in y.iter().enumerate() {
                    let denom = nv.max(1e-12);
                    for c in 0..last {
                        gs[r * last + c] = g[r] * x[r * last + c] / denom;
                    }
                }
                self.accumulate(grads, a, gs);
            }
            Op::MaskedFill(a, ref mask) => {
                let gs = g.iter().zip(mask).map(|(&v, &m)| if m { 0.0 } else { v }).collect();
                self.accumulate(grads, a, gs);
            }
        }
    }
}

/// out[m×n] += a[m×k] · b[k×n]
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// out[m×k] += g[m×n] · b[k×n]ᵀ
fn gemm_bt(g: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// out[k×n] += a[m×k]ᵀ · g[m×n]
fn gemm_at(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_pairwise_against_rows() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_fn([2, 2, 3], |k| k as f64));
        let b = t.constant(Tensor::from_fn([2, 3], |k| 10.0 * k as f64));
        let c = t.add(a, b).unwrap();
        // c[i,j,f] = a[i,j,f] + b[j,f]
        assert_eq!(t.value(c).get(&[1, 0, 2]), 8.0 + 20.0);
        assert_eq!(t.value(c).get(&[0, 1, 1]), 4.0 + 40.0);
    }

    #[test]
    fn incompatible_broadcast_names_op() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros([2, 3]));
        let b = t.constant(Tensor::zeros([2, 4]));
        let err = t.mul(a, b).unwrap_err();
        assert!(err.to_string().starts_with("mul:"), "{err}");
    }

    #[test]
    fn max_breaks_ties_by_lowest_index() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new([3], vec![2.0, 2.0, 1.0]).unwrap());
        let m = t.max(x, 0).unwrap();
        t.backward(m).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros([3]));
        let s = t.softmax(z, 0).unwrap();
        for &v in t.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros([2]));
        assert!(matches!(t.backward(x), Err(TensorError::NonScalarLoss(_))));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.square(x);
        t.backward(y).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 12.0);
        t.zero_grad();
        assert!(t.grad(x).is_none());
    }

    #[test]
    fn norm_of_zero_vector_has_finite_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::zeros([1, 3]));
        let n = t.norm(x).unwrap();
        let s = t.sum_all(n);
        t.backward(s).unwrap();
        assert!(t.grad(x).unwrap().all_finite());
    }
}
