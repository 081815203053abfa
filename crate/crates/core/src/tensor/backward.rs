use super::ops::{matmul_into, permute_tensor};
use super::tape::{Node, Op};
use super::{split_axis, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients<T: Scalar = f64> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// ∂loss/∂var; all zeros when the loss does not depend on `var`.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.wrt_id(var.id)
    }

    pub fn wrt_id(&self, id: usize) -> Tensor<T> {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[id].clone()),
        }
    }

    /// Takes the gradient out without cloning.
    pub fn take(&mut self, id: usize) -> Tensor<T> {
        self.grads[id]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[id].clone()))
    }
}

impl<T: Scalar> Tape<T> {
    /// Reverse sweep from a scalar `loss`. Each node is visited once, in
    /// reverse recording order.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        assert!(std::ptr::eq(self, loss.tape), "loss recorded on another tape");
        if self.consumed.get() {
            return Err(Error::BackwardTwice);
        }
        let nodes = self.nodes.borrow();
        let loss_node = &nodes[loss.id];
        if loss_node.value.numel() != 1 {
            return Err(Error::NotScalar(loss_node.value.shape().to_vec()));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&shapes)
            .map(|(g, s)| g.map(|d| Tensor::new(s.clone(), d).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

/// Adds `g[i] * factor(i)` into the broadcast operand `id` of length `len`.
fn add_reduced<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, len: usize, g: &[T], factor: impl Fn(usize) -> T) {
    let acc = accumulate(grads, id, len);
    if len == g.len() {
        for (i, (a, &gi)) in acc.iter_mut().zip(g).enumerate() {
            *a += gi * factor(i);
        }
    } else {
        for (i, &gi) in g.iter().enumerate() {
            acc[i % len] += gi * factor(i);
        }
    }
}

fn propagate<T: Scalar>(nodes: &[Node<T>], node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let input = |k: usize| &nodes[node.inputs[k]].value;
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Add | Op::Sub | Op::Mul | Op::Div => {
            let (a, b) = (input(0).data(), input(1).data());
            let (la, lb) = (a.len(), b.len());
            let (ia, ib) = (node.inputs[0], node.inputs[1]);
            match node.op {
                Op::Add => {
                    add_reduced(grads, ia, la, g, |_| T::one());
                    add_reduced(grads, ib, lb, g, |_| T::one());
                }
                Op::Sub => {
                    add_reduced(grads, ia, la, g, |_| T::one());
                    add_reduced(grads, ib, lb, g, |_| -T::one());
                }
                Op::Mul => {
                    add_reduced(grads, ia, la, g, |i| b[i % lb]);
                    add_reduced(grads, ib, lb, g, |i| a[i % la]);
                }
                Op::Div => {
                    add_reduced(grads, ia, la, g, |i| T::one() / b[i % lb]);
                    add_reduced(grads, ib, lb, g, |i| {
                        let bv = b[i % lb];
                        -a[i % la] / (bv * bv)
                    });
                }
                _ => unreachable!(),
            }
        }
        Op::Neg => add_reduced(grads, node.inputs[0], g.len(), g, |_| -T::one()),
        Op::Scale(c) => add_reduced(grads, node.inputs[0], g.len(), g, |_| *c),
        Op::Offset | Op::Reshape => add_reduced(grads, node.inputs[0], g.len(), g, |_| T::one()),
        Op::Tanh => add_reduced(grads, node.inputs[0], g.len(), g, |i| T::one() - y[i] * y[i]),
        Op::Sigmoid => add_reduced(grads, node.inputs[0], g.len(), g, |i| y[i] * (T::one() - y[i])),
        Op::Exp => add_reduced(grads, node.inputs[0], g.len(), g, |i| y[i]),
        Op::Log => {
            let x = input(0).data();
            add_reduced(grads, node.inputs[0], g.len(), g, |i| T::one() / x[i]);
        }
        Op::Relu => {
            let x = input(0).data();
            add_reduced(grads, node.inputs[0], g.len(), g, |i| {
                if x[i] > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            });
        }
        Op::Square => {
            let x = input(0).data();
            add_reduced(grads, node.inputs[0], g.len(), g, |i| T::lit(2.0) * x[i]);
        }
        Op::Affine => {
            let x = input(0);
            let w = input(1);
            let (out, inp) = (w.shape()[0], w.shape()[1]);
            let rows = x.numel() / inp.max(1);
            let (xd, wd) = (x.data(), w.data());
            let gx = accumulate(grads, node.inputs[0], xd.len());
            T::gemm(rows, out, inp, g, [out, 1], wd, [inp, 1], gx, [inp, 1]);
            let gw = accumulate(grads, node.inputs[1], wd.len());
            T::gemm(out, rows, inp, g, [1, out], xd, [inp, 1], gw, [inp, 1]);
            if node.inputs.len() == 3 {
                let gb = accumulate(grads, node.inputs[2], out);
                for gr in g.chunks(out) {
                    for (a, &go) in gb.iter_mut().zip(gr) {
                        *a += go;
                    }
                }
            }
        }
        Op::Matmul { b_shared } => {
            let a = input(0);
            let b = input(1);
            let sa = a.shape();
            let sb = b.shape();
            let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
            let n = sb[sb.len() - 1];
            let batch = a.numel() / (m * k).max(1);
            let at = permute_last_two(a);
            let bt = permute_last_two(b);
            {
                // dA = dC · Bᵀ
                let ga = accumulate(grads, node.inputs[0], a.numel());
                for p in 0..batch {
                    let bb = if *b_shared {
                        bt.data()
                    } else {
                        &bt.data()[p * k * n..(p + 1) * k * n]
                    };
                    matmul_into(
                        &g[p * m * n..(p + 1) * m * n],
                        bb,
                        &mut ga[p * m * k..(p + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            }
            {
                // dB = Aᵀ · dC
                let gb = accumulate(grads, node.inputs[1], b.numel());
                for p in 0..batch {
                    let dst = if *b_shared {
                        &mut gb[..]
                    } else {
                        &mut gb[p * k * n..(p + 1) * k * n]
                    };
                    matmul_into(
                        &at.data()[p * m * k..(p + 1) * m * k],
                        &g[p * m * n..(p + 1) * m * n],
                        dst,
                        k,
                        m,
                        n,
                    );
                }
            }
        }
        Op::Transpose => {
            let rank = node.value.rank();
            let mut perm: Vec<usize> = (0..rank).collect();
            perm.swap(rank - 2, rank - 1);
            scatter_permuted(grads, node, g, &perm);
        }
        Op::Permute(perm) => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            scatter_permuted(grads, node, g, &inverse);
        }
        Op::Sum => {
            let len = input(0).numel();
            let acc = accumulate(grads, node.inputs[0], len);
            acc.iter_mut().for_each(|a| *a += g[0]);
        }
        Op::Mean => {
            let len = input(0).numel();
            let s = g[0] / T::lit(len as f64);
            let acc = accumulate(grads, node.inputs[0], len);
            acc.iter_mut().for_each(|a| *a += s);
        }
        Op::SumAxis(axis) | Op::MeanAxis(axis) => {
            let x = input(0);
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            let factor = if matches!(node.op, Op::MeanAxis(_)) {
                T::one() / T::lit(n as f64)
            } else {
                T::one()
            };
            let acc = accumulate(grads, node.inputs[0], x.numel());
            for o in 0..outer {
                let src = &g[o * inner..(o + 1) * inner];
                for j in 0..n {
                    let dst = &mut acc[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (a, &gv) in dst.iter_mut().zip(src) {
                        *a += gv * factor;
                    }
                }
            }
        }
        Op::Softmax(axis) => {
            let (outer, n, inner) = split_axis(node.value.shape(), *axis);
            let acc = accumulate(grads, node.inputs[0], y.len());
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let dot: T = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                    for j in 0..n {
                        acc[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                    }
                }
            }
        }
        Op::CausalSoftmax => {
            let c = *node.value.shape().last().unwrap();
            let acc = accumulate(grads, node.inputs[0], y.len());
            for ((yr, gr), ar) in y.chunks(c).zip(g.chunks(c)).zip(acc.chunks_mut(c)) {
                let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for ((a, &yv), &gv) in ar.iter_mut().zip(yr).zip(gr) {
                    *a += yv * (gv - dot);
                }
            }
        }
        Op::LogSoftmax => {
            let c = *node.value.shape().last().unwrap();
            let acc = accumulate(grads, node.inputs[0], y.len());
            for ((yr, gr), ar) in y.chunks(c).zip(g.chunks(c)).zip(acc.chunks_mut(c)) {
                let total: T = gr.iter().copied().sum();
                for ((a, &yv), &gv) in ar.iter_mut().zip(yr).zip(gr) {
                    *a += gv - yv.exp() * total;
                }
            }
        }
        Op::Concat(axis) => {
            let shape = node.value.shape();
            let (outer, total, inner) = split_axis(shape, *axis);
            let mut start = 0;
            for &id in &node.inputs {
                let len_i = nodes[id].value.shape()[*axis];
                let numel = nodes[id].value.numel();
                let acc = accumulate(grads, id, numel);
                for o in 0..outer {
                    let src = &g[(o * total + start) * inner..(o * total + start + len_i) * inner];
                    let dst = &mut acc[o * len_i * inner..(o + 1) * len_i * inner];
                    for (a, &gv) in dst.iter_mut().zip(src) {
                        *a += gv;
                    }
                }
                start += len_i;
            }
        }
        Op::IndexSelect { axis, indices } => {
            let x = input(0);
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            let k = indices.len();
            let acc = accumulate(grads, node.inputs[0], x.numel());
            for o in 0..outer {
                for (pos, &j) in indices.iter().enumerate() {
                    let src = &g[(o * k + pos) * inner..(o * k + pos + 1) * inner];
                    let dst = &mut acc[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (a, &gv) in dst.iter_mut().zip(src) {
                        *a += gv;
                    }
                }
            }
        }
        Op::CachedAttention { heads, scale, weights } => {
            let steps = (node.inputs.len() - 1) / 2;
            let qd = input(0).data();
            let (b, w) = (input(0).shape()[0], input(0).shape()[1]);
            let hd = w / heads;
            let mut dq = vec![T::zero(); b * w];
            let mut dk = vec![vec![T::zero(); b * w]; steps];
            let mut dv = vec![vec![T::zero(); b * w]; steps];
            let mut dw = vec![T::zero(); steps];
            for row in 0..b {
                for h in 0..*heads {
                    let off = row * w + h * hd;
                    let ws = &weights[(row * heads + h) * steps..(row * heads + h + 1) * steps];
                    let mut inner = T::zero();
                    for s in 0..steps {
                        let vd = input(1 + steps + s).data();
                        let mut acc = T::zero();
                        for d in 0..hd {
                            acc += g[off + d] * vd[off + d];
                            dv[s][off + d] += ws[s] * g[off + d];
                        }
                        dw[s] = acc;
                        inner += ws[s] * acc;
                    }
                    for s in 0..steps {
                        let ds = ws[s] * (dw[s] - inner) * *scale;
                        let kd = input(1 + s).data();
                        for d in 0..hd {
                            dq[off + d] += ds * kd[off + d];
                            dk[s][off + d] += ds * qd[off + d];
                        }
                    }
                }
            }
            let parts = std::iter::once(dq).chain(dk).chain(dv);
            for (&id, part) in node.inputs.iter().zip(parts) {
                let acc = accumulate(grads, id, part.len());
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
        }
        Op::GuardRows(bad) => {
            let rows = bad.len().max(1);
            let width = g.len() / rows;
            let acc = accumulate(grads, node.inputs[0], g.len());
            for (r, (dst, src)) in acc.chunks_mut(width.max(1)).zip(g.chunks(width.max(1))).enumerate() {
                if !bad.get(r).copied().unwrap_or(false) {
                    for (a, &gv) in dst.iter_mut().zip(src) {
                        *a += gv;
                    }
                }
            }
        }
    }
}

fn permute_last_two<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let rank = t.rank();
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.swap(rank - 2, rank - 1);
    permute_tensor(t, &perm)
}

/// Routes the output gradient back through an axis permutation; `inverse`
/// maps the output layout back to the input layout.
fn scatter_permuted<T: Scalar>(grads: &mut [Option<Vec<T>>], node: &Node<T>, g: &[T], inverse: &[usize]) {
    let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec()).expect("gradient shape");
    let back = permute_tensor(&gt, inverse);
    let acc = accumulate(grads, node.inputs[0], back.numel());
    for (a, &gv) in acc.iter_mut().zip(back.data()) {
        *a += gv;
    }
}
