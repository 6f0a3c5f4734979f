//! Reverse-mode autodiff tape.
//!
//! A [`Tape`] records every forward op as a node holding its output value and
//! enough bookkeeping to replay the chain rule. [`Tape::backward`] consumes
//! the tape, walks nodes in reverse creation order exactly once, and returns a
//! gradient per requires-grad leaf.
//!
//! Every op validates shapes up front (errors name the op and both dim lists)
//! and scans its output for non-finite values, so NaN/Inf surface at the op
//! that produced them rather than three modules later.

use super::kernels::{self, Conv2dGeom};
use super::{real, Real, Tensor};
use crate::error::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    /// scale * x + shift, elementwise; only the scale matters to backward
    Affine(Var, f64),
    Exp(Var),
    /// clamp to [lo, hi]; gradient passes inside the interval only
    Clamp(Var, f64, f64),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    /// softmax over the last axis
    Softmax(Var),
    /// layer norm over the last axis, no learned affine
    LayerNorm(Var, f64),
    /// C[m,n] = A[m,k] B[k,n]
    Matmul { a: Var, b: Var, m: usize, k: usize, n: usize },
    /// C[m,n] = A[m,k] B[n,k]^T
    MatmulNT { a: Var, b: Var, m: usize, k: usize, n: usize },
    /// [m,n] + broadcast row [n]
    AddRow { mat: Var, row: Var },
    MeanAll(Var),
    SumAll(Var),
    /// [m,n] -> [1,n], mean over rows
    MeanAxis0(Var),
    /// scalar a / scalar b
    ScalarDiv { a: Var, b: Var },
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize, len: usize },
    /// each row duplicated `times` consecutive times
    RepeatRows { x: Var, times: usize },
    /// whole matrix stacked `times` times
    TileRows { x: Var, times: usize },
    Reshape(Var),
    /// rows of `table` gathered by token id
    Embedding { table: Var, ids: Vec<u32> },
    /// Multi-head attention: per item and head, softmax(q k^T / sqrt(dh)) v.
    Mha { q: Var, k: Var, v: Var, heads: usize, items: usize },
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: Conv2dGeom },
    TConv2d { input: Var, weight: Var, bias: Option<Var>, geom: Conv2dGeom },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op,
    /// Extra forward state some ops save for backward (e.g. attention
    /// probabilities).
    aux: Vec<T>,
}

/// Gradients keyed by [`Var`], produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Recording tape; create one per forward/backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        tune_allocator();
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite { op: op_name(&op) });
        }
        let id = self.nodes.len();
        self.nodes.push(Node { value, requires_grad, op, aux: Vec::new() });
        Ok(Var(id))
    }

    /// Registers an input tensor. Gradients are produced only for leaves with
    /// `requires_grad` set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Result<Var, NumericsError> {
        self.push(value, requires_grad, Op::Leaf)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var, NumericsError> {
        self.leaf(value, false)
    }

    // ── elementwise ──────────────────────────────────────────────────

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: Op,
    ) -> Result<Var, NumericsError> {
        let value = self.value(a).zip(self.value(b), name, f)?;
        self.push(value, self.rg(a) || self.rg(b), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|x| -x);
        self.push(value, self.rg(a), Op::Neg(a))
    }

    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var, NumericsError> {
        let (s, c) = (real::<T>(scale), real::<T>(shift));
        let value = self.value(a).map(|x| s * x + c);
        self.push(value, self.rg(a), Op::Affine(a, scale))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|x| x.exp());
        self.push(value, self.rg(a), Op::Exp(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, NumericsError> {
        let (l, h) = (real::<T>(lo), real::<T>(hi));
        let value = self.value(a).map(|x| x.max(l).min(h));
        self.push(value, self.rg(a), Op::Clamp(a, lo, hi))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|x| x.max(T::ZERO));
        self.push(value, self.rg(a), Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(gelu_fwd);
        self.push(value, self.rg(a), Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(sigmoid_fwd);
        self.push(value, self.rg(a), Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(softplus_fwd);
        self.push(value, self.rg(a), Op::Softplus(a))
    }

    /// x * sigmoid(x), used for conditioning pathways.
    pub fn silu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.sigmoid(a)?;
        self.mul(a, s)
    }

    // ── normalizations ───────────────────────────────────────────────

    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let dims = x.dims().to_vec();
        let width = *dims.last().ok_or_else(|| {
            NumericsError::Contract("softmax on zero-rank tensor".into())
        })?;
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(width) {
            let mx = row.iter().copied().fold(row[0], T::max);
            let mut sum = T::ZERO;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v = *v / sum;
            }
        }
        self.push(Tensor::from_vec(&dims, data), self.rg(a), Op::Softmax(a))
    }

    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let dims = x.dims().to_vec();
        let width = *dims.last().ok_or_else(|| {
            NumericsError::Contract("layer_norm on zero-rank tensor".into())
        })?;
        let inv_w = real::<T>(1.0 / width as f64);
        let eps_t = real::<T>(eps);
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(width) {
            let mean = row.iter().copied().sum::<T>() * inv_w;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_w;
            let inv_std = T::ONE / (var + eps_t).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv_std;
            }
        }
        self.push(Tensor::from_vec(&dims, data), self.rg(a), Op::LayerNorm(a, eps))
    }

    // ── matrix ops ───────────────────────────────────────────────────

    fn matmul_dims(&self, a: Var, b: Var, nt: bool) -> Result<(usize, usize, usize), NumericsError> {
        let (da, db) = (self.dims(a), self.dims(b));
        let op = if nt { "matmul_nt" } else { "matmul" };
        if da.len() != 2 || db.len() != 2 {
            return Err(NumericsError::ShapeMismatch { op, lhs: da.to_vec(), rhs: db.to_vec() });
        }
        let (m, k) = (da[0], da[1]);
        let (bk, bn) = if nt { (db[1], db[0]) } else { (db[0], db[1]) };
        if k != bk {
            return Err(NumericsError::ShapeMismatch { op, lhs: da.to_vec(), rhs: db.to_vec() });
        }
        Ok((m, k, bn))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k, n) = self.matmul_dims(a, b, false)?;
        let mut out = vec![T::ZERO; m * n];
        kernels::matmul_nn(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(
            Tensor::from_vec(&[m, n], out),
            self.rg(a) || self.rg(b),
            Op::Matmul { a, b, m, k, n },
        )
    }

    /// Matmul with the right operand transposed: `a [m,k] x b [n,k] -> [m,n]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k, n) = self.matmul_dims(a, b, true)?;
        let mut out = vec![T::ZERO; m * n];
        kernels::matmul_nt(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.push(
            Tensor::from_vec(&[m, n], out),
            self.rg(a) || self.rg(b),
            Op::MatmulNT { a, b, m, k, n },
        )
    }

    pub fn add_row(&mut self, mat: Var, row: Var) -> Result<Var, NumericsError> {
        let (dm, dr) = (self.dims(mat), self.dims(row));
        if dm.len() != 2 || self.value(row).numel() != dm[1] {
            return Err(NumericsError::ShapeMismatch {
                op: "add_row",
                lhs: dm.to_vec(),
                rhs: dr.to_vec(),
            });
        }
        let n = dm[1];
        let rowd = self.value(row).data().to_vec();
        let mut data = self.value(mat).data().to_vec();
        for chunk in data.chunks_exact_mut(n) {
            for (c, &r) in chunk.iter_mut().zip(rowd.iter()) {
                *c += r;
            }
        }
        let dims = dm.to_vec();
        self.push(
            Tensor::from_vec(&dims, data),
            self.rg(mat) || self.rg(row),
            Op::AddRow { mat, row },
        )
    }

    // ── reductions ───────────────────────────────────────────────────

    pub fn mean_all(&mut self, a: Var) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let m = x.data().iter().copied().sum::<T>() / real::<T>(x.numel() as f64);
        self.push(Tensor::scalar(m), self.rg(a), Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).data().iter().copied().sum::<T>();
        self.push(Tensor::scalar(s), self.rg(a), Op::SumAll(a))
    }

    pub fn mean_axis0(&mut self, a: Var) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let d = x.dims();
        if d.len() != 2 {
            return Err(NumericsError::ShapeMismatch {
                op: "mean_axis0",
                lhs: d.to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (d[0], d[1]);
        let inv_m = real::<T>(1.0 / m as f64);
        let mut out = vec![T::ZERO; n];
        for row in x.data().chunks_exact(n) {
            for (o, &v) in out.iter_mut().zip(row.iter()) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o = *o * inv_m;
        }
        self.push(Tensor::from_vec(&[1, n], out), self.rg(a), Op::MeanAxis0(a))
    }

    pub fn scalar_div(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        if self.value(a).numel() != 1 || self.value(b).numel() != 1 {
            return Err(NumericsError::Contract("scalar_div expects scalar operands".into()));
        }
        let v = self.value(a).item() / self.value(b).item();
        self.push(Tensor::scalar(v), self.rg(a) || self.rg(b), Op::ScalarDiv { a, b })
    }

    // ── shape ops ────────────────────────────────────────────────────

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::Contract("concat of zero tensors".into()));
        }
        let base = self.dims(parts[0]).to_vec();
        if axis >= base.len() {
            return Err(NumericsError::Contract(format!(
                "concat axis {axis} out of range for dims {base:?}"
            )));
        }
        let mut axis_total = 0;
        for &p in parts {
            let d = self.dims(p);
            let compatible = d.len() == base.len()
                && d.iter()
                    .zip(base.iter())
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(NumericsError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: d.to_vec(),
                });
            }
            axis_total += d[axis];
        }
        let mut dims = base.clone();
        dims[axis] = axis_total;
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = vec![T::ZERO; dims.iter().product()];
        let out_stride = axis_total * inner;
        let mut offset = 0;
        for &p in parts {
            let span = self.dims(p)[axis];
            let src = self.value(p).data();
            for o in 0..outer {
                let dst = &mut data[o * out_stride + offset * inner..][..span * inner];
                dst.copy_from_slice(&src[o * span * inner..][..span * inner]);
            }
            offset += span;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::from_vec(&dims, data), rg, Op::Concat { parts: parts.to_vec(), axis })
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, NumericsError> {
        let d = self.dims(x).to_vec();
        if axis >= d.len() || start + len > d[axis] || len == 0 {
            return Err(NumericsError::Contract(format!(
                "slice [{start}, {start}+{len}) on axis {axis} out of range for dims {d:?}"
            )));
        }
        let outer: usize = d[..axis].iter().product();
        let inner: usize = d[axis + 1..].iter().product();
        let span = d[axis];
        let mut dims = d.clone();
        dims[axis] = len;
        let src = self.value(x).data();
        let mut data = vec![T::ZERO; outer * len * inner];
        for o in 0..outer {
            data[o * len * inner..][..len * inner]
                .copy_from_slice(&src[(o * span + start) * inner..][..len * inner]);
        }
        self.push(Tensor::from_vec(&dims, data), self.rg(x), Op::Slice { x, axis, start, len })
    }

    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Result<Var, NumericsError> {
        let d = self.dims(x).to_vec();
        if d.len() != 2 {
            return Err(NumericsError::ShapeMismatch { op: "repeat_rows", lhs: d, rhs: vec![] });
        }
        let (m, n) = (d[0], d[1]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * times * n);
        for row in src.chunks_exact(n) {
            for _ in 0..times {
                data.extend_from_slice(row);
            }
        }
        self.push(Tensor::from_vec(&[m * times, n], data), self.rg(x), Op::RepeatRows { x, times })
    }

    pub fn tile_rows(&mut self, x: Var, times: usize) -> Result<Var, NumericsError> {
        let d = self.dims(x).to_vec();
        if d.len() != 2 {
            return Err(NumericsError::ShapeMismatch { op: "tile_rows", lhs: d, rhs: vec![] });
        }
        let (m, n) = (d[0], d[1]);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(m * times * n);
        for _ in 0..times {
            data.extend_from_slice(src);
        }
        self.push(Tensor::from_vec(&[m * times, n], data), self.rg(x), Op::TileRows { x, times })
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var, NumericsError> {
        let value = self.value(x).reshaped(dims)?;
        self.push(value, self.rg(x), Op::Reshape(x))
    }

    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var, NumericsError> {
        let d = self.dims(table).to_vec();
        if d.len() != 2 {
            return Err(NumericsError::ShapeMismatch { op: "embedding", lhs: d, rhs: vec![] });
        }
        let (vocab, width) = (d[0], d[1]);
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            if id as usize >= vocab {
                return Err(NumericsError::Contract(format!(
                    "token id {id} outside vocabulary of {vocab}"
                )));
            }
            data.extend_from_slice(&src[id as usize * width..][..width]);
        }
        self.push(
            Tensor::from_vec(&[ids.len(), width], data),
            self.rg(table),
            Op::Embedding { table, ids: ids.to_vec() },
        )
    }

    // ── attention ────────────────────────────────────────────────────

    /// Multi-head attention over `items` independent sequences packed along
    /// axis 0. `q` is `[items * n, D]`, `k`/`v` are `[items * m, D]`; per
    /// item and head the output is `softmax(q_h k_h^T / sqrt(dh)) v_h`,
    /// heads re-packed to `[items * n, D]`.
    pub fn mha(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        items: usize,
    ) -> Result<Var, NumericsError> {
        let (dq, dk, dv) = (self.dims(q), self.dims(k), self.dims(v));
        let ok = dq.len() == 2
            && dk.len() == 2
            && dk == dv
            && dq[1] == dk[1]
            && dq[1] % heads == 0
            && dq[0] % items == 0
            && dk[0] % items == 0;
        if !ok {
            return Err(NumericsError::ShapeMismatch {
                op: "mha",
                lhs: dq.to_vec(),
                rhs: dk.to_vec(),
            });
        }
        let d = dq[1];
        let n = dq[0] / items;
        let m = dk[0] / items;
        let dh = d / heads;
        let scale = real::<T>(1.0 / (dh as f64).sqrt());

        let qd = self.value(q).data();
        let kd = self.value(k).data();
        let vd = self.value(v).data();
        let mut out = vec![T::ZERO; items * n * d];
        let mut probs = vec![T::ZERO; items * heads * n * m];
        let mut qh = vec![T::ZERO; n * dh];
        let mut kht = vec![T::ZERO; m * dh];
        let mut vh = vec![T::ZERO; m * dh];
        let mut oh = vec![T::ZERO; n * dh];
        for item in 0..items {
            for h in 0..heads {
                gather_head(qd, &mut qh, item * n, n, d, h * dh, dh);
                gather_head_t(kd, &mut kht, item * m, m, d, h * dh, dh);
                gather_head(vd, &mut vh, item * m, m, d, h * dh, dh);
                let p = &mut probs[(item * heads + h) * n * m..][..n * m];
                kernels::matmul_nn(&qh, &kht, p, n, dh, m);
                for row in p.chunks_exact_mut(m) {
                    let mx = row.iter().copied().fold(row[0] * scale, |a, b| a.max(b * scale));
                    let mut sum = T::ZERO;
                    for x in row.iter_mut() {
                        *x = (*x * scale - mx).exp();
                        sum += *x;
                    }
                    for x in row.iter_mut() {
                        *x = *x / sum;
                    }
                }
                oh.iter_mut().for_each(|x| *x = T::ZERO);
                kernels::matmul_nn(p, &vh, &mut oh, n, m, dh);
                scatter_head(&oh, &mut out, item * n, n, d, h * dh, dh);
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        let var = self.push(
            Tensor::from_vec(&[items * n, d], out),
            rg,
            Op::Mha { q, k, v, heads, items },
        )?;
        self.nodes[var.0].aux = probs;
        Ok(var)
    }

    // ── convolutions ─────────────────────────────────────────────────

    fn conv_geom(
        &self,
        input: Var,
        weight: Var,
        stride: usize,
        pad: usize,
        transposed: bool,
    ) -> Result<Conv2dGeom, NumericsError> {
        let (di, dw) = (self.dims(input), self.dims(weight));
        let op = if transposed { "tconv2d" } else { "conv2d" };
        if di.len() != 4 || dw.len() != 4 || di[3] != dw[2] {
            return Err(NumericsError::ShapeMismatch {
                op,
                lhs: di.to_vec(),
                rhs: dw.to_vec(),
            });
        }
        Ok(Conv2dGeom {
            n: di[0],
            h: di[1],
            w: di[2],
            cin: di[3],
            cout: dw[3],
            kh: dw[0],
            kw: dw[1],
            stride,
            pad,
        })
    }

    /// 2D convolution over NHWC input with `[kh,kw,cin,cout]` weights.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NumericsError> {
        let geom = self.conv_geom(input, weight, stride, pad, false)?;
        let (oh, ow) = geom.out_hw();
        let bias_data = bias.map(|b| self.value(b).data());
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias_data,
            &geom,
        );
        let rg = self.rg(input) || self.rg(weight) || bias.map(|b| self.rg(b)).unwrap_or(false);
        self.push(
            Tensor::from_vec(&[geom.n, oh, ow, geom.cout], out),
            rg,
            Op::Conv2d { input, weight, bias, geom },
        )
    }

    /// Transposed (fractionally-strided) convolution; upsamples by `stride`.
    pub fn tconv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NumericsError> {
        let geom = self.conv_geom(input, weight, stride, pad, true)?;
        let (oh, ow) = geom.tconv_out_hw();
        let bias_data = bias.map(|b| self.value(b).data());
        let out = kernels::tconv2d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias_data,
            &geom,
        );
        let rg = self.rg(input) || self.rg(weight) || bias.map(|b| self.rg(b)).unwrap_or(false);
        self.push(
            Tensor::from_vec(&[geom.n, oh, ow, geom.cout], out),
            rg,
            Op::TConv2d { input, weight, bias, geom },
        )
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Backpropagates from a scalar loss. Consumes the tape; every
    /// requires-grad leaf receives a gradient of its own dims.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>, NumericsError> {
        if self.value(loss).numel() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward expects a scalar loss, got dims {:?}",
                self.dims(loss)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::ONE));

        for i in (0..n).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            // Keep only leaf gradients alive; interior grads are consumed.
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let acc = |grads: &mut [Option<Tensor<T>>], v: Var, contrib: Tensor<T>| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, c) in existing.data_mut().iter_mut().zip(contrib.data()) {
                        *e += *c;
                    }
                }
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, g.zip(self.value(*b), "mul_bwd", |gv, bv| gv * bv).unwrap());
                acc(grads, *b, g.zip(self.value(*a), "mul_bwd", |gv, av| gv * av).unwrap());
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                acc(grads, *a, g.zip(bv, "div_bwd", |gv, b| gv / b).unwrap());
                let av = self.value(*a);
                let gb = Tensor::from_vec(
                    g.dims(),
                    g.data()
                        .iter()
                        .zip(av.data().iter().zip(bv.data().iter()))
                        .map(|(&gv, (&a, &b))| -gv * a / (b * b))
                        .collect(),
                );
                acc(grads, *b, gb);
            }
            Op::Neg(a) => acc(grads, *a, g.map(|x| -x)),
            Op::Affine(a, scale) => {
                let s = real::<T>(*scale);
                acc(grads, *a, g.map(|x| x * s));
            }
            Op::Exp(a) => {
                acc(grads, *a, g.zip(&node.value, "exp_bwd", |gv, y| gv * y).unwrap());
            }
            Op::Clamp(a, lo, hi) => {
                let (l, h) = (real::<T>(*lo), real::<T>(*hi));
                let x = self.value(*a);
                acc(
                    grads,
                    *a,
                    g.zip(x, "clamp_bwd", |gv, xv| {
                        if xv > l && xv < h { gv } else { T::ZERO }
                    })
                    .unwrap(),
                );
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(
                    grads,
                    *a,
                    g.zip(x, "relu_bwd", |gv, xv| if xv > T::ZERO { gv } else { T::ZERO })
                        .unwrap(),
                );
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                acc(grads, *a, g.zip(x, "gelu_bwd", |gv, xv| gv * gelu_grad(xv)).unwrap());
            }
            Op::Sigmoid(a) => {
                acc(
                    grads,
                    *a,
                    g.zip(&node.value, "sigmoid_bwd", |gv, s| gv * s * (T::ONE - s)).unwrap(),
                );
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                acc(
                    grads,
                    *a,
                    g.zip(x, "softplus_bwd", |gv, xv| gv * sigmoid_fwd(xv)).unwrap(),
                );
            }
            Op::Softmax(a) => {
                let s = &node.value;
                let width = *s.dims().last().unwrap();
                let mut gx = vec![T::ZERO; s.numel()];
                for ((gx_row, g_row), s_row) in gx
                    .chunks_exact_mut(width)
                    .zip(g.data().chunks_exact(width))
                    .zip(s.data().chunks_exact(width))
                {
                    let dot = g_row.iter().zip(s_row.iter()).map(|(&a, &b)| a * b).sum::<T>();
                    for ((o, &gv), &sv) in gx_row.iter_mut().zip(g_row).zip(s_row) {
                        *o = sv * (gv - dot);
                    }
                }
                acc(grads, *a, Tensor::from_vec(s.dims(), gx));
            }
            Op::LayerNorm(a, eps) => {
                let x = self.value(*a);
                let width = *x.dims().last().unwrap();
                let inv_w = real::<T>(1.0 / width as f64);
                let eps_t = real::<T>(*eps);
                let mut gx = vec![T::ZERO; x.numel()];
                for ((gx_row, g_row), x_row) in gx
                    .chunks_exact_mut(width)
                    .zip(g.data().chunks_exact(width))
                    .zip(x.data().chunks_exact(width))
                {
                    let mean = x_row.iter().copied().sum::<T>() * inv_w;
                    let var =
                        x_row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_w;
                    let inv_std = T::ONE / (var + eps_t).sqrt();
                    let g_mean = g_row.iter().copied().sum::<T>() * inv_w;
                    let gy_dot = g_row
                        .iter()
                        .zip(x_row.iter())
                        .map(|(&gv, &xv)| gv * (xv - mean) * inv_std)
                        .sum::<T>()
                        * inv_w;
                    for ((o, &gv), &xv) in gx_row.iter_mut().zip(g_row).zip(x_row) {
                        let y = (xv - mean) * inv_std;
                        *o = inv_std * (gv - g_mean - y * gy_dot);
                    }
                }
                acc(grads, *a, Tensor::from_vec(x.dims(), gx));
            }
            Op::Matmul { a, b, m, k, n } => {
                if self.rg(*a) {
                    let mut ga = vec![T::ZERO; m * k];
                    kernels::matmul_nt(g.data(), self.value(*b).data(), &mut ga, *m, *n, *k);
                    acc(grads, *a, Tensor::from_vec(&[*m, *k], ga));
                }
                if self.rg(*b) {
                    let mut gb = vec![T::ZERO; k * n];
                    kernels::matmul_tn(self.value(*a).data(), g.data(), &mut gb, *m, *k, *n);
                    acc(grads, *b, Tensor::from_vec(&[*k, *n], gb));
                }
            }
            Op::MatmulNT { a, b, m, k, n } => {
                if self.rg(*a) {
                    let mut ga = vec![T::ZERO; m * k];
                    kernels::matmul_nn(g.data(), self.value(*b).data(), &mut ga, *m, *n, *k);
                    acc(grads, *a, Tensor::from_vec(&[*m, *k], ga));
                }
                if self.rg(*b) {
                    let mut gb = vec![T::ZERO; n * k];
                    kernels::matmul_tn(g.data(), self.value(*a).data(), &mut gb, *m, *n, *k);
                    acc(grads, *b, Tensor::from_vec(&[*n, *k], gb));
                }
            }
            Op::AddRow { mat, row } => {
                acc(grads, *mat, g.clone());
                if self.rg(*row) {
                    let n = self.value(*row).numel();
                    let mut gr = vec![T::ZERO; n];
                    for chunk in g.data().chunks_exact(n) {
                        for (o, &gv) in gr.iter_mut().zip(chunk.iter()) {
                            *o += gv;
                        }
                    }
                    acc(grads, *row, Tensor::from_vec(self.dims(*row), gr));
                }
            }
            Op::MeanAll(a) => {
                let x = self.value(*a);
                let gv = g.item() / real::<T>(x.numel() as f64);
                acc(grads, *a, Tensor::full(x.dims(), gv));
            }
            Op::SumAll(a) => {
                let x = self.value(*a);
                acc(grads, *a, Tensor::full(x.dims(), g.item()));
            }
            Op::MeanAxis0(a) => {
                let d = self.dims(*a);
                let (m, n) = (d[0], d[1]);
                let inv_m = real::<T>(1.0 / m as f64);
                let grow: Vec<T> = g.data().iter().map(|&v| v * inv_m).collect();
                let mut gx = Vec::with_capacity(m * n);
                for _ in 0..m {
                    gx.extend_from_slice(&grow);
                }
                acc(grads, *a, Tensor::from_vec(&[m, n], gx));
            }
            Op::ScalarDiv { a, b } => {
                let (av, bv) = (self.value(*a).item(), self.value(*b).item());
                acc(grads, *a, Tensor::scalar(g.item() / bv));
                acc(grads, *b, Tensor::scalar(-g.item() * av / (bv * bv)));
            }
            Op::Concat { parts, axis } => {
                let out_dims = node.value.dims();
                let outer: usize = out_dims[..*axis].iter().product();
                let inner: usize = out_dims[*axis + 1..].iter().product();
                let out_stride = out_dims[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let span = self.dims(p)[*axis];
                    if self.rg(p) {
                        let mut gp = vec![T::ZERO; outer * span * inner];
                        for o in 0..outer {
                            gp[o * span * inner..][..span * inner].copy_from_slice(
                                &g.data()[o * out_stride + offset * inner..][..span * inner],
                            );
                        }
                        acc(grads, p, Tensor::from_vec(self.dims(p), gp));
                    }
                    offset += span;
                }
            }
            Op::Slice { x, axis, start, len } => {
                let d = self.dims(*x);
                let outer: usize = d[..*axis].iter().product();
                let inner: usize = d[*axis + 1..].iter().product();
                let span = d[*axis];
                let mut gx = vec![T::ZERO; self.value(*x).numel()];
                for o in 0..outer {
                    gx[(o * span + start) * inner..][..len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..][..len * inner]);
                }
                acc(grads, *x, Tensor::from_vec(d, gx));
            }
            Op::RepeatRows { x, times } => {
                let d = self.dims(*x);
                let (m, n) = (d[0], d[1]);
                let mut gx = vec![T::ZERO; m * n];
                for (i, chunk) in g.data().chunks_exact(n).enumerate() {
                    let row = &mut gx[(i / times) * n..][..n];
                    for (o, &gv) in row.iter_mut().zip(chunk.iter()) {
                        *o += gv;
                    }
                }
                acc(grads, *x, Tensor::from_vec(d, gx));
            }
            Op::TileRows { x, times } => {
                let d = self.dims(*x);
                let (m, n) = (d[0], d[1]);
                let mut gx = vec![T::ZERO; m * n];
                for rep in 0..*times {
                    let block = &g.data()[rep * m * n..][..m * n];
                    for (o, &gv) in gx.iter_mut().zip(block.iter()) {
                        *o += gv;
                    }
                }
                acc(grads, *x, Tensor::from_vec(d, gx));
            }
            Op::Reshape(x) => {
                acc(grads, *x, Tensor::from_vec(self.dims(*x), g.data().to_vec()));
            }
            Op::Embedding { table, ids } => {
                if self.rg(*table) {
                    let d = self.dims(*table);
                    let width = d[1];
                    let mut gt = vec![T::ZERO; d[0] * width];
                    for (row, &id) in g.data().chunks_exact(width).zip(ids.iter()) {
                        let dst = &mut gt[id as usize * width..][..width];
                        for (o, &gv) in dst.iter_mut().zip(row.iter()) {
                            *o += gv;
                        }
                    }
                    acc(grads, *table, Tensor::from_vec(d, gt));
                }
            }
            Op::Mha { q, k, v, heads, items } => {
                let d = self.dims(*q)[1];
                let n = self.dims(*q)[0] / items;
                let m = self.dims(*k)[0] / items;
                let dh = d / heads;
                let scale = real::<T>(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let probs = &node.aux;
                let mut gq = vec![T::ZERO; items * n * d];
                let mut gk = vec![T::ZERO; items * m * d];
                let mut gv = vec![T::ZERO; items * m * d];
                let mut qh = vec![T::ZERO; n * dh];
                let mut kh = vec![T::ZERO; m * dh];
                let mut vht = vec![T::ZERO; m * dh];
                let mut goh = vec![T::ZERO; n * dh];
                let mut gqh = vec![T::ZERO; n * dh];
                let mut gkh = vec![T::ZERO; m * dh];
                let mut gvh = vec![T::ZERO; m * dh];
                let mut ds = vec![T::ZERO; n * m];
                for item in 0..*items {
                    for h in 0..*heads {
                        gather_head(qd, &mut qh, item * n, n, d, h * dh, dh);
                        gather_head(kd, &mut kh, item * m, m, d, h * dh, dh);
                        gather_head_t(vd, &mut vht, item * m, m, d, h * dh, dh);
                        gather_head(g.data(), &mut goh, item * n, n, d, h * dh, dh);
                        let p = &probs[(item * heads + h) * n * m..][..n * m];

                        gvh.iter_mut().for_each(|x| *x = T::ZERO);
                        kernels::matmul_tn(p, &goh, &mut gvh, n, m, dh);

                        // dP, then softmax backward with the score scale
                        ds.iter_mut().for_each(|x| *x = T::ZERO);
                        kernels::matmul_nn(&goh, &vht, &mut ds, n, dh, m);
                        for (ds_row, p_row) in ds.chunks_exact_mut(m).zip(p.chunks_exact(m)) {
                            let dot = ds_row
                                .iter()
                                .zip(p_row.iter())
                                .map(|(&a, &b)| a * b)
                                .sum::<T>();
                            for (x, &pv) in ds_row.iter_mut().zip(p_row.iter()) {
                                *x = scale * pv * (*x - dot);
                            }
                        }

                        gqh.iter_mut().for_each(|x| *x = T::ZERO);
                        kernels::matmul_nn(&ds, &kh, &mut gqh, n, m, dh);
                        gkh.iter_mut().for_each(|x| *x = T::ZERO);
                        kernels::matmul_tn(&ds, &qh, &mut gkh, n, m, dh);

                        scatter_head(&gqh, &mut gq, item * n, n, d, h * dh, dh);
                        scatter_head(&gkh, &mut gk, item * m, m, d, h * dh, dh);
                        scatter_head(&gvh, &mut gv, item * m, m, d, h * dh, dh);
                    }
                }
                acc(grads, *q, Tensor::from_vec(self.dims(*q), gq));
                acc(grads, *k, Tensor::from_vec(self.dims(*k), gk));
                acc(grads, *v, Tensor::from_vec(self.dims(*v), gv));
            }
            Op::Conv2d { input, weight, bias, geom } => {
                let mut gin = vec![T::ZERO; self.value(*input).numel()];
                let mut gw = vec![T::ZERO; self.value(*weight).numel()];
                let mut gb = bias.map(|b| vec![T::ZERO; self.value(b).numel()]);
                kernels::conv2d_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                    geom,
                    &mut gin,
                    &mut gw,
                    gb.as_deref_mut(),
                );
                acc(grads, *input, Tensor::from_vec(self.dims(*input), gin));
                acc(grads, *weight, Tensor::from_vec(self.dims(*weight), gw));
                if let (Some(b), Some(gbv)) = (bias, gb) {
                    acc(grads, *b, Tensor::from_vec(self.dims(*b), gbv));
                }
            }
            Op::TConv2d { input, weight, bias, geom } => {
                let mut gin = vec![T::ZERO; self.value(*input).numel()];
                let mut gw = vec![T::ZERO; self.value(*weight).numel()];
                let mut gb = bias.map(|b| vec![T::ZERO; self.value(b).numel()]);
                kernels::tconv2d_backward(
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                    geom,
                    &mut gin,
                    &mut gw,
                    gb.as_deref_mut(),
                );
                acc(grads, *input, Tensor::from_vec(self.dims(*input), gin));
                acc(grads, *weight, Tensor::from_vec(self.dims(*weight), gw));
                if let (Some(b), Some(gbv)) = (bias, gb) {
                    acc(grads, *b, Tensor::from_vec(self.dims(*b), gbv));
                }
            }
        }
    }
}

/// Copies one head's columns `[col0, col0+dh)` of rows `[row0, row0+rows)`
/// into a contiguous `[rows, dh]` scratch buffer.
fn gather_head<T: Real>(src: &[T], dst: &mut [T], row0: usize, rows: usize, d: usize, col0: usize, dh: usize) {
    for r in 0..rows {
        dst[r * dh..(r + 1) * dh].copy_from_slice(&src[(row0 + r) * d + col0..][..dh]);
    }
}

/// Like [`gather_head`] but transposed: fills a `[dh, rows]` scratch.
fn gather_head_t<T: Real>(src: &[T], dst: &mut [T], row0: usize, rows: usize, d: usize, col0: usize, dh: usize) {
    for r in 0..rows {
        let row = &src[(row0 + r) * d + col0..][..dh];
        for (c, &v) in row.iter().enumerate() {
            dst[c * rows + r] = v;
        }
    }
}

/// Writes a contiguous `[rows, dh]` head buffer back into its column slot.
fn scatter_head<T: Real>(src: &[T], dst: &mut [T], row0: usize, rows: usize, d: usize, col0: usize, dh: usize) {
    for r in 0..rows {
        dst[(row0 + r) * d + col0..][..dh].copy_from_slice(&src[r * dh..(r + 1) * dh]);
    }
}

#[inline(always)]
fn sigmoid_fwd<T: Real>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

#[inline(always)]
fn softplus_fwd<T: Real>(x: T) -> T {
    // max(x,0) + ln(1 + exp(-|x|)) is stable at both tails
    x.max(T::ZERO) + (T::ONE + (-x.abs()).exp()).ln()
}

/// Rational tanh (Lambert-style continued-fraction expansion), saturated
/// outside |x| ~ 4.97 where the true value is within 1.4e-4 of one. Pure
/// polynomial arithmetic, so it vectorizes; libm tanh is a ~70-cycle scalar
/// call and dominated whole-network runtime.
#[inline(always)]
fn tanh_fast<T: Real>(x: T) -> (T, T) {
    let cutoff = real::<T>(4.97);
    if x > cutoff {
        return (T::ONE, T::ZERO);
    }
    if x < -cutoff {
        return (-T::ONE, T::ZERO);
    }
    let x2 = x * x;
    let (c1, c3, c5, c7) = (
        real::<T>(135135.0),
        real::<T>(17325.0),
        real::<T>(378.0),
        T::ONE,
    );
    let (d0, d2, d4, d6) = (
        real::<T>(135135.0),
        real::<T>(62370.0),
        real::<T>(3150.0),
        real::<T>(28.0),
    );
    let p = x * (c1 + x2 * (c3 + x2 * (c5 + x2 * c7)));
    let q = d0 + x2 * (d2 + x2 * (d4 + x2 * d6));
    let dp = c1 + x2 * (real::<T>(3.0) * c3 + x2 * (real::<T>(5.0) * c5 + x2 * real::<T>(7.0) * c7));
    let dq = x * (real::<T>(2.0) * d2 + x2 * (real::<T>(4.0) * d4 + x2 * real::<T>(6.0) * d6));
    let t = p / q;
    // exact derivative of the rational form itself, so analytic gradients
    // match finite differences of the implemented forward to rounding
    let dt = (dp * q - p * dq) / (q * q);
    (t, dt)
}

#[inline(always)]
fn gelu_fwd<T: Real>(x: T) -> T {
    let c = real::<T>(0.7978845608028654); // sqrt(2/pi)
    let k = real::<T>(0.044715);
    let half = real::<T>(0.5);
    let (t, _) = tanh_fast(c * (x + k * x * x * x));
    half * x * (T::ONE + t)
}

#[inline(always)]
fn gelu_grad<T: Real>(x: T) -> T {
    let c = real::<T>(0.7978845608028654);
    let k = real::<T>(0.044715);
    let half = real::<T>(0.5);
    let three = real::<T>(3.0);
    let (t, dt) = tanh_fast(c * (x + k * x * x * x));
    let d_inner = c * (T::ONE + three * k * x * x);
    half * (T::ONE + t) + half * x * dt * d_inner
}

/// Training churns through hundreds of MB of short-lived large buffers per
/// step; with glibc defaults those round-trip through mmap and page faults.
/// Keeping them on the heap roughly halves step time.
fn tune_allocator() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    });
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Neg(..) => "neg",
        Op::Affine(..) => "affine",
        Op::Exp(..) => "exp",
        Op::Clamp(..) => "clamp",
        Op::Relu(..) => "relu",
        Op::Gelu(..) => "gelu",
        Op::Sigmoid(..) => "sigmoid",
        Op::Softplus(..) => "softplus",
        Op::Softmax(..) => "softmax",
        Op::LayerNorm(..) => "layer_norm",
        Op::Matmul { .. } => "matmul",
        Op::MatmulNT { .. } => "matmul_nt",
        Op::AddRow { .. } => "add_row",
        Op::MeanAll(..) => "mean_all",
        Op::SumAll(..) => "sum_all",
        Op::MeanAxis0(..) => "mean_axis0",
        Op::ScalarDiv { .. } => "scalar_div",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::RepeatRows { .. } => "repeat_rows",
        Op::TileRows { .. } => "tile_rows",
        Op::Reshape(..) => "reshape",
        Op::Embedding { .. } => "embedding",
        Op::Mha { .. } => "mha",
        Op::Conv2d { .. } => "conv2d",
        Op::TConv2d { .. } => "tconv2d",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_elementwise() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]), false).unwrap();
        let b = tape.leaf(Tensor::from_vec(&[2], vec![3.0, 4.0]), false).unwrap();
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::<f64>::new();
        let eye = tape
            .leaf(
                Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
                false,
            )
            .unwrap();
        let a_data: Vec<f64> = (0..9).map(|i| i as f64 * 0.37 - 1.0).collect();
        let a = tape.leaf(Tensor::from_vec(&[3, 3], a_data.clone()), false).unwrap();
        let c = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(c).data(), &a_data[..]);
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::from_vec(&[3], vec![0.0; 3]), false).unwrap();
        let s = tape.softmax(a).unwrap();
        for &v in tape.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_error_names_op_and_dims() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]), false).unwrap();
        let b = tape.leaf(Tensor::zeros(&[4, 2]), false).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let err = tape.leaf(Tensor::from_vec(&[2], vec![1.0, f32::NAN]), false);
        assert!(matches!(err, Err(NumericsError::NonFinite { .. })));
    }

    #[test]
    fn grad_of_sum_of_squares() {
        // loss = sum(x*x), x = [1,2,3] -> dx = 2x
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]), true).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn sigmoid_grad_at_zero() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(0.0), true).unwrap();
        let s = tape.sigmoid(x).unwrap();
        let grads = tape.backward(s).unwrap();
        assert!((grads.get(x).unwrap().item() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[3]), true).unwrap();
        let y = tape.mul(x, x).unwrap();
        assert!(matches!(tape.backward(y), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn grads_absent_for_untracked_leaves() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]), true).unwrap();
        let y = tape.leaf(Tensor::from_vec(&[2], vec![3.0, 4.0]), false).unwrap();
        let p = tape.mul(x, y).unwrap();
        let loss = tape.sum_all(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).is_some());
        assert!(grads.get(y).is_none());
    }

    #[test]
    fn backward_linearity_over_loss_sum() {
        // grad of (L1 + L2) equals grad L1 + grad L2 computed separately
        let xv = Tensor::from_vec(&[4], vec![0.3, -0.7, 1.1, 0.05]);

        let run = |mode: u8| -> Vec<f64> {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(xv.clone(), true).unwrap();
            let sq = tape.mul(x, x).unwrap();
            let l1 = tape.sum_all(sq).unwrap();
            let sg = tape.sigmoid(x).unwrap();
            let l2 = tape.mean_all(sg).unwrap();
            let loss = match mode {
                0 => l1,
                1 => l2,
                _ => tape.add(l1, l2).unwrap(),
            };
            let grads = tape.backward(loss).unwrap();
            grads.get(x).unwrap().data().to_vec()
        };

        let (g1, g2, g12) = (run(0), run(1), run(2));
        for i in 0..4 {
            assert!((g12[i] - (g1[i] + g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn slice_concat_roundtrip_exact() {
        let mut tape = Tape::<f32>::new();
        let data: Vec<f32> = (0..24).map(|i| i as f32 * 0.5 - 3.0).collect();
        let x = tape.leaf(Tensor::from_vec(&[2, 3, 4], data.clone()), false).unwrap();
        for axis in 0..3 {
            let d = tape.dims(x)[axis];
            let first = tape.slice(x, axis, 0, 1).unwrap();
            let rest = tape.slice(x, axis, 1, d - 1).unwrap();
            let back = tape.concat(&[first, rest], axis).unwrap();
            assert_eq!(tape.value(back).data(), &data[..], "axis {axis}");
        }
    }

    #[test]
    fn embedding_gathers_and_scatters() {
        let mut tape = Tape::<f64>::new();
        let table = tape
            .leaf(Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), true)
            .unwrap();
        let e = tape.embedding(table, &[2, 0, 2]).unwrap();
        assert_eq!(tape.value(e).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = tape.sum_all(e).unwrap();
        let grads = tape.backward(loss).unwrap();
        // row 2 used twice, row 0 once, row 1 never
        assert_eq!(grads.get(table).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
        let mut t2 = Tape::<f64>::new();
        let table2 = t2.leaf(Tensor::zeros(&[3, 2]), false).unwrap();
        assert!(t2.embedding(table2, &[3]).is_err());
    }

    #[test]
    fn repeat_and_tile_rows() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]), true).unwrap();
        let r = tape.repeat_rows(x, 2).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        let t = tape.tile_rows(x, 2).unwrap();
        assert_eq!(tape.value(t).data(), &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        let joined = tape.concat(&[r, t], 0).unwrap();
        let loss = tape.sum_all(joined).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0; 4]);
    }
}
