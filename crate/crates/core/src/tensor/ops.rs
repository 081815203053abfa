use super::tape::Op;
use super::{broadcast_shape, split_axis, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

impl<'t, T: Scalar> Var<'t, T> {
    fn binary(self, other: Var<'t, T>, kind: Binary) -> Result<Var<'t, T>> {
        self.same_tape(&other);
        let (name, op) = match kind {
            Binary::Add => ("add", Op::Add),
            Binary::Sub => ("sub", Op::Sub),
            Binary::Mul => ("mul", Op::Mul),
            Binary::Div => ("div", Op::Div),
        };
        let value = {
            let a = self.node();
            let b = other.node();
            let shape = broadcast_shape(a.value.shape(), b.value.shape()).ok_or_else(|| Error::ShapeMismatch {
                op: name,
                left: a.value.shape().to_vec(),
                right: b.value.shape().to_vec(),
            })?;
            let (ad, bd) = (a.value.data(), b.value.data());
            let n: usize = shape.iter().product();
            let data = match kind {
                Binary::Add => zip_broadcast(ad, bd, n, |x, y| x + y),
                Binary::Sub => zip_broadcast(ad, bd, n, |x, y| x - y),
                Binary::Mul => zip_broadcast(ad, bd, n, |x, y| x * y),
                Binary::Div => zip_broadcast(ad, bd, n, |x, y| x / y),
            };
            Tensor::new(shape, data)?
        };
        self.tape.push(name, value, op, vec![self.id, other.id])
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, Binary::Div)
    }

    fn unary(self, name: &'static str, op: Op<T>, f: impl Fn(T) -> T) -> Result<Var<'t, T>> {
        let value = self.node().value.map(f);
        self.tape.push(name, value, op, vec![self.id])
    }

    pub fn neg(self) -> Result<Var<'t, T>> {
        self.unary("neg", Op::Neg, |x| -x)
    }

    pub fn scale(self, c: T) -> Result<Var<'t, T>> {
        self.unary("scale", Op::Scale(c), |x| x * c)
    }

    /// Adds a constant to every entry.
    pub fn offset(self, c: T) -> Result<Var<'t, T>> {
        self.unary("offset", Op::Offset, |x| x + c)
    }

    pub fn tanh(self) -> Result<Var<'t, T>> {
        self.unary("tanh", Op::Tanh, |x| x.tanh())
    }

    pub fn sigmoid(self) -> Result<Var<'t, T>> {
        self.unary("sigmoid", Op::Sigmoid, sigmoid)
    }

    pub fn exp(self) -> Result<Var<'t, T>> {
        self.unary("exp", Op::Exp, |x| x.exp())
    }

    pub fn ln(self) -> Result<Var<'t, T>> {
        self.unary("log", Op::Log, |x| x.ln())
    }

    pub fn relu(self) -> Result<Var<'t, T>> {
        self.unary("relu", Op::Relu, |x| x.max(T::zero()))
    }

    pub fn square(self) -> Result<Var<'t, T>> {
        self.unary("square", Op::Square, |x| x * x)
    }

    /// `x · weightᵀ + bias` over the trailing dimension; `weight` is `[out, in]`.
    pub fn affine(self, weight: Var<'t, T>, bias: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        self.same_tape(&weight);
        let value = {
            let x = self.node();
            let w = weight.node();
            let (xs, ws) = (x.value.shape(), w.value.shape());
            if ws.len() != 2 || xs.is_empty() || *xs.last().unwrap() != ws[1] {
                return Err(Error::ShapeMismatch {
                    op: "affine",
                    left: xs.to_vec(),
                    right: ws.to_vec(),
                });
            }
            let (out, inp) = (ws[0], ws[1]);
            let rows = x.value.numel() / inp.max(1);
            let mut data = vec![T::zero(); rows * out];
            if let Some(b) = bias {
                self.same_tape(&b);
                let bn = b.node();
                if bn.value.shape() != [out] {
                    return Err(Error::ShapeMismatch {
                        op: "affine bias",
                        left: vec![out],
                        right: bn.value.shape().to_vec(),
                    });
                }
                for r in 0..rows {
                    data[r * out..(r + 1) * out].copy_from_slice(bn.value.data());
                }
            }
            let (xd, wd) = (x.value.data(), w.value.data());
            T::gemm(rows, inp, out, xd, [inp, 1], wd, [1, inp], &mut data, [out, 1]);
            let mut shape = xs.to_vec();
            *shape.last_mut().unwrap() = out;
            Tensor::new(shape, data)?
        };
        let mut inputs = vec![self.id, weight.id];
        if let Some(b) = bias {
            inputs.push(b.id);
        }
        self.tape.push("affine", value, Op::Affine, inputs)
    }

    /// Matrix product over the last two axes: `[.., m, k] · [.., k, n]`.
    ///
    /// Leading axes must agree, except that a rank-2 right operand is shared
    /// across every leading index of the left one.
    pub fn matmul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(&other);
        let (value, b_shared) = {
            let a = self.node();
            let b = other.node();
            let (sa, sb) = (a.value.shape(), b.value.shape());
            let mismatch = || Error::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            };
            if sa.len() < 2 || sb.len() < 2 {
                return Err(mismatch());
            }
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
            if k != k2 {
                return Err(mismatch());
            }
            let lead_a = &sa[..sa.len() - 2];
            let lead_b = &sb[..sb.len() - 2];
            let b_shared = lead_b.is_empty() && !lead_a.is_empty();
            if !b_shared && lead_a != lead_b {
                return Err(mismatch());
            }
            let batch: usize = lead_a.iter().product();
            let mut data = vec![T::zero(); batch * m * n];
            let (ad, bd) = (a.value.data(), b.value.data());
            for p in 0..batch {
                let ab = &ad[p * m * k..(p + 1) * m * k];
                let bb = if b_shared { bd } else { &bd[p * k * n..(p + 1) * k * n] };
                let cb = &mut data[p * m * n..(p + 1) * m * n];
                matmul_into(ab, bb, cb, m, k, n);
            }
            let mut shape = lead_a.to_vec();
            shape.extend([m, n]);
            (Tensor::new(shape, data)?, b_shared)
        };
        self.tape
            .push("matmul", value, Op::Matmul { b_shared }, vec![self.id, other.id])
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t, T>> {
        let rank = self.node().value.rank();
        if rank < 2 {
            return Err(Error::InvalidShape {
                op: "transpose",
                msg: format!("needs rank >= 2, got {rank}"),
            });
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        let value = permute_tensor(&self.node().value, &perm);
        self.tape.push("transpose", value, Op::Transpose, vec![self.id])
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t, T>> {
        let rank = self.node().value.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(Error::InvalidShape {
                op: "permute",
                msg: format!("permutation {perm:?} for rank {rank}"),
            });
        }
        for &p in perm {
            if p >= rank || seen[p] {
                return Err(Error::InvalidShape {
                    op: "permute",
                    msg: format!("invalid permutation {perm:?}"),
                });
            }
            seen[p] = true;
        }
        let value = permute_tensor(&self.node().value, perm);
        self.tape
            .push("permute", value, Op::Permute(perm.to_vec()), vec![self.id])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = self.node().value.clone().reshape(shape.to_vec())?;
        self.tape.push("reshape", value, Op::Reshape, vec![self.id])
    }

    pub fn sum(self) -> Result<Var<'t, T>> {
        let value = Tensor::scalar(self.node().value.sum());
        self.tape.push("sum", value, Op::Sum, vec![self.id])
    }

    pub fn mean(self) -> Result<Var<'t, T>> {
        let value = {
            let node = self.node();
            let n = node.value.numel();
            if n == 0 {
                return Err(Error::InvalidShape {
                    op: "mean",
                    msg: "empty tensor".into(),
                });
            }
            Tensor::scalar(node.value.sum() / T::lit(n as f64))
        };
        self.tape.push("mean", value, Op::Mean, vec![self.id])
    }

    fn check_axis(&self, op: &'static str, axis: usize) -> Result<Vec<usize>> {
        let shape = self.shape();
        if axis >= shape.len() {
            return Err(Error::AxisOutOfRange {
                op,
                axis,
                rank: shape.len(),
            });
        }
        Ok(shape)
    }

    fn reduce_axis(self, axis: usize, mean: bool) -> Result<Var<'t, T>> {
        let name = if mean { "mean_axis" } else { "sum_axis" };
        let shape = self.check_axis(name, axis)?;
        let (outer, n, inner) = split_axis(&shape, axis);
        if mean && n == 0 {
            return Err(Error::InvalidShape {
                op: name,
                msg: "empty axis".into(),
            });
        }
        let value = {
            let node = self.node();
            let d = node.value.data();
            let mut out = vec![T::zero(); outer * inner];
            for o in 0..outer {
                for j in 0..n {
                    let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (acc, &x) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                        *acc += x;
                    }
                }
            }
            if mean {
                let inv = T::one() / T::lit(n as f64);
                out.iter_mut().for_each(|x| *x *= inv);
            }
            let mut s = shape.clone();
            s.remove(axis);
            Tensor::new(s, out)?
        };
        let op = if mean { Op::MeanAxis(axis) } else { Op::SumAxis(axis) };
        self.tape.push(name, value, op, vec![self.id])
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t, T>> {
        self.reduce_axis(axis, false)
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t, T>> {
        self.reduce_axis(axis, true)
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'t, T>> {
        let shape = self.check_axis("softmax", axis)?;
        let (outer, n, inner) = split_axis(&shape, axis);
        let value = {
            let node = self.node();
            let d = node.value.data();
            let mut out = vec![T::zero(); d.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let max = (0..n).fold(T::neg_infinity(), |m, j| m.max(d[idx(j)]));
                    let mut total = T::zero();
                    for j in 0..n {
                        let e = (d[idx(j)] - max).exp();
                        out[idx(j)] = e;
                        total += e;
                    }
                    for j in 0..n {
                        out[idx(j)] /= total;
                    }
                }
            }
            Tensor::new(shape, out)?
        };
        self.tape.push("softmax", value, Op::Softmax(axis), vec![self.id])
    }

    /// Softmax over the last axis of a `[.., R, C]` score tensor where row `r`
    /// only sees columns `c <= r + (C - R)`. Masked entries are exactly zero.
    pub fn causal_softmax(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        if shape.len() < 2 || shape[shape.len() - 1] < shape[shape.len() - 2] {
            return Err(Error::InvalidShape {
                op: "causal_softmax",
                msg: format!("needs [.., R, C] with C >= R, got {shape:?}"),
            });
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let value = {
            let node = self.node();
            let d = node.value.data();
            let mut out = vec![T::zero(); d.len()];
            for (row_idx, (src, dst)) in d.chunks(c).zip(out.chunks_mut(c)).enumerate() {
                let visible = row_idx % r + (c - r) + 1;
                causal_row(&src[..visible], &mut dst[..visible]);
            }
            Tensor::new(shape, out)?
        };
        self.tape
            .push("causal_softmax", value, Op::CausalSoftmax, vec![self.id])
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(self) -> Result<Var<'t, T>> {
        let shape = self.shape();
        let n = *shape.last().ok_or(Error::InvalidShape {
            op: "log_softmax",
            msg: "scalar input".into(),
        })?;
        let value = {
            let node = self.node();
            let d = node.value.data();
            let mut out = vec![T::zero(); d.len()];
            for (src, dst) in d.chunks(n).zip(out.chunks_mut(n)) {
                let max = src.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
                let lse = src.iter().map(|&x| (x - max).exp()).sum::<T>().ln() + max;
                for (y, &x) in dst.iter_mut().zip(src) {
                    *y = x - lse;
                }
            }
            Tensor::new(shape, out)?
        };
        self.tape.push("log_softmax", value, Op::LogSoftmax, vec![self.id])
    }

    /// Gathers `indices` along `axis` (indices may repeat).
    pub fn index_select(self, axis: usize, indices: &[usize]) -> Result<Var<'t, T>> {
        let shape = self.check_axis("index_select", axis)?;
        let (outer, n, inner) = split_axis(&shape, axis);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange {
                op: "index_select",
                index: bad,
                extent: n,
            });
        }
        let value = {
            let node = self.node();
            let d = node.value.data();
            let k = indices.len();
            let mut out = Vec::with_capacity(outer * k * inner);
            for o in 0..outer {
                for &j in indices {
                    out.extend_from_slice(&d[(o * n + j) * inner..(o * n + j + 1) * inner]);
                }
            }
            let mut s = shape.clone();
            s[axis] = k;
            Tensor::new(s, out)?
        };
        self.tape.push(
            "index_select",
            value,
            Op::IndexSelect {
                axis,
                indices: indices.to_vec(),
            },
            vec![self.id],
        )
    }

    /// Selects positions along the leading (time) axis.
    pub fn slice_time(self, indices: &[usize]) -> Result<Var<'t, T>> {
        self.index_select(0, indices)
    }

    /// Replaces every non-finite slice along axis 0 with zeros and stops
    /// gradient flow through it. Returns which slices were replaced.
    pub fn guard_rows(self) -> Result<(Var<'t, T>, Vec<bool>)> {
        let (value, bad) = {
            let node = self.node();
            let shape = node.value.shape().to_vec();
            let rows = shape.first().copied().unwrap_or(1);
            let width = node.value.numel() / rows.max(1);
            let mut data = node.value.data().to_vec();
            let mut bad = vec![false; rows];
            for (r, chunk) in data.chunks_mut(width.max(1)).enumerate().take(rows) {
                if chunk.iter().any(|x| !x.is_finite()) {
                    bad[r] = true;
                    chunk.iter_mut().for_each(|x| *x = T::zero());
                }
            }
            (Tensor::new(shape, data)?, bad)
        };
        let var = self
            .tape
            .push("guard_rows", value, Op::GuardRows(bad.clone()), vec![self.id])?;
        Ok((var, bad))
    }
}

/// Concatenates along an existing axis; all other extents must agree.
pub fn concat<'t, T: Scalar>(vars: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = vars.first().ok_or(Error::InvalidShape {
        op: "concat",
        msg: "no inputs".into(),
    })?;
    let tape = first.tape;
    let base = first.check_axis("concat", axis)?;
    let mut total = 0;
    let mut shapes = Vec::with_capacity(vars.len());
    for v in vars {
        first.same_tape(v);
        let s = v.shape();
        let compatible =
            s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                left: base,
                right: s,
            });
        }
        total += s[axis];
        shapes.push(s);
    }
    let (outer, _, inner) = split_axis(&base, axis);
    let value = {
        let nodes = tape.nodes.borrow();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (v, s) in vars.iter().zip(&shapes) {
                let chunk = s[axis] * inner;
                out.extend_from_slice(&nodes[v.id].value.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut s = base.clone();
        s[axis] = total;
        Tensor::new(s, out)?
    };
    tape.push("concat", value, Op::Concat(axis), vars.iter().map(|v| v.id).collect())
}

/// Stacks equally shaped tensors along a new leading axis.
/// Attention of one query row `q: [B, W]` over cached rows `keys[s], values[s]:
/// [B, W]`, with `W` split into `heads` equal parts. Returns the `[B, W]`
/// context; scores are scaled by `scale` before the softmax over the cache.
pub fn cached_attention<'t, T: Scalar>(
    q: Var<'t, T>,
    keys: &[Var<'t, T>],
    values: &[Var<'t, T>],
    heads: usize,
    scale: T,
) -> Result<Var<'t, T>> {
    let shape = q.shape();
    if shape.len() != 2 || heads == 0 || !shape[1].is_multiple_of(heads) {
        return Err(Error::InvalidShape {
            op: "cached_attention",
            msg: format!("query {shape:?} cannot be split into {heads} heads"),
        });
    }
    if keys.is_empty() || keys.len() != values.len() {
        return Err(Error::InvalidShape {
            op: "cached_attention",
            msg: format!("{} keys and {} values", keys.len(), values.len()),
        });
    }
    for v in keys.iter().chain(values) {
        q.same_tape(v);
        if v.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "cached_attention",
                left: shape,
                right: v.shape(),
            });
        }
    }
    let (b, w) = (shape[0], shape[1]);
    let hd = w / heads;
    let steps = keys.len();
    let tape = q.tape;
    let (value, weights) = {
        let nodes = tape.nodes.borrow();
        let qd = nodes[q.id].value.data();
        let kd: Vec<&[T]> = keys.iter().map(|k| nodes[k.id].value.data()).collect();
        let vd: Vec<&[T]> = values.iter().map(|v| nodes[v.id].value.data()).collect();
        let mut out = vec![T::zero(); b * w];
        let mut weights = vec![T::zero(); b * heads * steps];
        for row in 0..b {
            for h in 0..heads {
                let off = row * w + h * hd;
                let ws = &mut weights[(row * heads + h) * steps..(row * heads + h + 1) * steps];
                for (s, score) in ws.iter_mut().enumerate() {
                    let dot: T = (0..hd).map(|d| qd[off + d] * kd[s][off + d]).sum();
                    *score = dot * scale;
                }
                let max = ws.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for x in ws.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                for (s, x) in ws.iter_mut().enumerate() {
                    *x /= total;
                    for d in 0..hd {
                        out[off + d] += *x * vd[s][off + d];
                    }
                }
            }
        }
        (Tensor::new([b, w], out)?, weights)
    };
    let mut inputs = Vec::with_capacity(1 + 2 * steps);
    inputs.push(q.id);
    inputs.extend(keys.iter().map(|k| k.id));
    inputs.extend(values.iter().map(|v| v.id));
    tape.push(
        "cached_attention",
        value,
        Op::CachedAttention { heads, scale, weights },
        inputs,
    )
}

pub fn stack<'t, T: Scalar>(vars: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let expanded = vars
        .iter()
        .map(|v| {
            let mut s = vec![1];
            s.extend(v.shape());
            v.reshape(&s)
        })
        .collect::<Result<Vec<_>>>()?;
    concat(&expanded, 0)
}

#[inline]
fn zip_broadcast<T: Scalar>(a: &[T], b: &[T], n: usize, f: impl Fn(T, T) -> T) -> Vec<T> {
    let (la, lb) = (a.len(), b.len());
    if la == n && lb == n {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    } else if lb == 1 {
        a.iter().map(|&x| f(x, b[0])).collect()
    } else if la == 1 {
        b.iter().map(|&y| f(a[0], y)).collect()
    } else {
        (0..n).map(|i| f(a[i % la], b[i % lb])).collect()
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn causal_row<T: Scalar>(src: &[T], dst: &mut [T]) {
    let max = src.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut total = T::zero();
    for (y, &x) in dst.iter_mut().zip(src) {
        *y = (x - max).exp();
        total += *y;
    }
    dst.iter_mut().for_each(|y| *y /= total);
}

/// `c += a · b` for row-major `a: [m, k]`, `b: [k, n]`, `c: [m, n]`.
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm(m, k, n, a, [k, 1], b, [n, 1], c, [n, 1]);
}

pub(crate) fn permute_tensor<T: Scalar>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let shape = t.shape();
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let d = t.data();
    let mut out = Vec::with_capacity(d.len());
    let mut counter = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..d.len() {
        out.push(d[offset]);
        for ax in (0..rank).rev() {
            counter[ax] += 1;
            offset += strides[ax];
            if counter[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * counter[ax];
            counter[ax] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permutation preserves element count")
}
