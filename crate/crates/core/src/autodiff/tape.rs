use std::cell::RefCell;
use std::sync::Arc;

use rand::Rng;

use super::tensor::{axis_extents, Float, Tensor};
use crate::error::{Error, Result};

/// Records primitive operations in execution order for reverse-mode differentiation.
///
/// Nodes are appended as operations run, so the record is already topologically
/// sorted; `backward` walks it in exact reverse and then clears it.
pub struct Tape<T: Float> {
    nodes: RefCell<Vec<Node<T>>>,
}

struct Node<T: Float> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

enum Op<T: Float> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, T),
    MatMul { a: usize, b: usize, trans_b: bool },
    Sigmoid(usize),
    Tanh(usize),
    Gelu(usize),
    Softmax { x: usize, axis: usize },
    LogSoftmax { x: usize, axis: usize },
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Embedding { table: usize, ids: Vec<usize> },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { x: usize, axis: usize, start: usize },
    Reshape(usize),
    Permute { x: usize, perm: Vec<usize> },
    Dropout { x: usize, mask: Vec<T> },
    CrossEntropy {
        logits: usize,
        targets: Vec<usize>,
        ignore: usize,
        probs: Vec<T>,
        count: usize,
    },
    Sum(usize),
    Mean(usize),
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Float> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Float> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Float> Copy for Var<'_, T> {}

/// Gradients produced by [`Tape::backward`], indexed by variable id.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of a `requires_grad` leaf. Leaves the loss does not depend on get zeros.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.get(var.id)
    }

    pub fn get(&self, id: usize) -> Option<&Tensor<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: usize) -> Option<Tensor<T>> {
        self.grads.get_mut(id).and_then(|g| g.take())
    }
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    /// Registers a leaf whose storage is shared with the caller (model parameters).
    pub fn leaf_shared(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = parents.iter().any(|&p| nodes[p].needs_grad);
        nodes.push(Node {
            value: Arc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Back-propagates from a scalar `loss`, returning gradients for every
    /// `requires_grad` leaf. Gradients of a tensor used several times add up.
    /// The tape is cleared afterwards.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::shape("backward", nodes[loss.id].value.shape(), &[]));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.id].needs_grad {
            grads[loss.id] = Some(vec![T::one()]);
        }

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, id, &g, &mut grads);
        }

        let grads = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, node.needs_grad) {
                (Op::Leaf, true) => Some(match g {
                    Some(data) => Tensor::new(node.value.shape().to_vec(), data)
                        .expect("gradient matches leaf shape"),
                    None => Tensor::zeros(node.value.shape()),
                }),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

fn grad_slot<'a, T: Float>(
    grads: &'a mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    id: usize,
) -> Option<&'a mut Vec<T>> {
    if !nodes[id].needs_grad {
        return None;
    }
    let len = nodes[id].value.len();
    Some(grads[id].get_or_insert_with(|| vec![T::zero(); len]))
}

fn backprop<T: Float>(nodes: &[Node<T>], id: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for &p in [a, b] {
                if let Some(d) = grad_slot(grads, nodes, p) {
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(d) = grad_slot(grads, nodes, *a) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = grad_slot(grads, nodes, *b) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (nodes[*a].value.clone(), nodes[*b].value.clone());
            if let Some(d) = grad_slot(grads, nodes, *a) {
                for ((d, &g), &y) in d.iter_mut().zip(g).zip(vb.data()) {
                    *d += g * y;
                }
            }
            if let Some(d) = grad_slot(grads, nodes, *b) {
                for ((d, &g), &x) in d.iter_mut().zip(g).zip(va.data()) {
                    *d += g * x;
                }
            }
        }
        Op::AddRow(x, b) => {
            if let Some(d) = grad_slot(grads, nodes, *x) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            if let Some(d) = grad_slot(grads, nodes, *b) {
                let n = d.len();
                for row in g.chunks(n) {
                    d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::Scale(x, c) => {
            if let Some(d) = grad_slot(grads, nodes, *x) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *c);
            }
        }
        Op::MatMul { a, b, trans_b } => {
            let (va, vb) = (nodes[*a].value.clone(), nodes[*b].value.clone());
            let dims = matmul_dims(va.shape(), vb.shape(), *trans_b).expect("checked in forward");
            let MatDims { batch, m, k, n } = dims;
            if let Some(d) = grad_slot(grads, nodes, *a) {
                for bi in 0..batch {
                    let gc = &g[bi * m * n..(bi + 1) * m * n];
                    let bb = &vb.data()[bi * k * n..(bi + 1) * k * n];
                    let da = &mut d[bi * m * k..(bi + 1) * m * k];
                    // dA = dC · op(B)^T
                    let bt = if *trans_b { (k as isize, 1) } else { (1, n as isize) };
                    T::gemm(m, n, k, gc, (n as isize, 1), bb, bt, T::one(), da);
                }
            }
            if let Some(d) = grad_slot(grads, nodes, *b) {
                for bi in 0..batch {
                    let gc = &g[bi * m * n..(bi + 1) * m * n];
                    let aa = &va.data()[bi * m * k..(bi + 1) * m * k];
                    let db = &mut d[bi * k * n..(bi + 1) * k * n];
                    if *trans_b {
                        // dB[n,k] = dC^T · A
                        T::gemm(n, m, k, gc, (1, n as isize), aa, (k as isize, 1), T::one(), db);
                    } else {
                        // dB[k,n] = A^T · dC
                        T::gemm(k, m, n, aa, (1, k as isize), gc, (n as isize, 1), T::one(), db);
                    }
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(d) = grad_slot(grads, nodes, *x) {
                for ((d, &g), &y) in d.iter_mut().zip(g).zip(out.data()) {
                    *d += g * y * (T::one() - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(d) = grad_slot(grads, nodes, *x) {
                for ((d, &g), &y) in d.iter_mut().zip(g).zip(out.data()) {
                    *d += g * (T::one() - y * y);
                }
            }
        }
        Op::Gelu(x) => {
            let vx = nodes[*x].value.clone();
            if let Some(d) = grad_slot(grads, nodes, *x) {
                for ((d, &g), &x) in d.iter_mut().zip(g).zip(vx.data()) {
                    *d += g * gelu_grad(x);
                }
            }
        }
        Op::Softmax { x, axis } => {
            if let Some(d) = grad_slot(grads, nodes, *x) {
                let (outer, len, inner) = axis_extents(out.shape(), *axis);
                let y = out.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let mut dot = T::zero();
                        for l in 0..len {
                            dot += g[idx(l)] * y[idx(l)];
                        }
                        for l in 0..len {
                            d[idx(l)] += y[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
            }
        }
        Op::LogSoftmax { x, axis } => {
            if let Some(d) = grad_slot(grads, nodes, *x) {
                let (outer, len, inner) = axis_extents(out.shape(), *axis);
                let y = out.data();
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |l: usize| (o * len + l) * inner + i;
                        let mut total = T::zero();
                        for l in 0..len {
                            total += g[idx(l)];
                        }
                        for l in 0..len {
                            d[idx(l)] += g[idx(l)] - y[idx(l)].exp() * total;
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            mean,
            rstd,
        } => {
            let vx = nodes[*x].value.clone();
            let vg = nodes[*gain].value.clone();
            let n = vg.len();
            let rows = vx.len() / n;
            let xhat = |r: usize, j: usize| (vx.data()[r * n + j] - mean[r]) * rstd[r];
            if let Some(d) = grad_slot(grads, nodes, *gain) {
                for r in 0..rows {
                    for j in 0..n {
                        d[j] += g[r * n + j] * xhat(r, j);
                    }
                }
            }
            if let Some(d) = grad_slot(grads, nodes, *bias) {
                for row in g.chunks(n) {
                    d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                }
            }
            if let Some(d) = grad_slot(grads, nodes, *x) {
                let inv_n = T::one() / T::of(n as f64);
                for r in 0..rows {
                    let mut mean_dxhat = T::zero();
                    let mut mean_dxhat_xhat = T::zero();
                    for j in 0..n {
                        let dxhat = g[r * n + j] * vg.data()[j];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat(r, j);
                    }
                    mean_dxhat *= inv_n;
                    mean_dxhat_xhat *= inv_n;
                    for j in 0..n {
                        let dxhat = g[r * n + j] * vg.data()[j];
                        d[r * n + j] +=
                            rstd[r] * (dxhat - mean_dxhat - xhat(r, j) * mean_dxhat_xhat);
                    }
                }
            }
        }
        Op::Embedding { table, ids } => {
            if let Some(d) = grad_slot(grads, nodes, *table) {
                let dim = out.shape()[1];
                for (row, &id) in ids.iter().enumerate() {
                    let src = &g[row * dim..(row + 1) * dim];
                    d[id * dim..(id + 1) * dim]
                        .iter_mut()
                        .zip(src)
                        .for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::Concat { parts, axis } => {
            let (outer, total, inner) = axis_extents(out.shape(), *axis);
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].value.shape()[*axis];
                if let Some(d) = grad_slot(grads, nodes, p) {
                    for o in 0..outer {
                        let src = &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        d[o * len * inner..(o + 1) * len * inner]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, &g)| *d += g);
                    }
                }
                offset += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let full = nodes[*x].value.shape().to_vec();
            if let Some(d) = grad_slot(grads, nodes, *x) {
                let (outer, len, inner) = axis_extents(&full, *axis);
                let width = out.shape()[*axis];
                for o in 0..outer {
                    let dst = &mut d[(o * len + start) * inner..(o * len + start + width) * inner];
                    let src = &g[o * width * inner..(o + 1) * width * inner];
                    dst.iter_mut().zip(src).for_each(|(d, &g)| *d += g);
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(d) = grad_slot(grads, nodes, *x) {
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
        }
        Op::Permute { x, perm } => {
            let in_shape = nodes[*x].value.shape().to_vec();
            if let Some(d) = grad_slot(grads, nodes, *x) {
                for_each_permuted(&in_shape, perm, |out_idx, in_idx| d[in_idx] += g[out_idx]);
            }
        }
        Op::Dropout { x, mask } => {
            if let Some(d) = grad_slot(grads, nodes, *x) {
                for ((d, &g), &m) in d.iter_mut().zip(g).zip(mask) {
                    *d += g * m;
                }
            }
        }
        Op::CrossEntropy {
            logits,
            targets,
            ignore,
            probs,
            count,
        } => {
            if *count == 0 {
                return;
            }
            if let Some(d) = grad_slot(grads, nodes, *logits) {
                let vocab = nodes[*logits].value.shape()[1];
                let scale = g[0] / T::of(*count as f64);
                for (row, &t) in targets.iter().enumerate() {
                    if t == *ignore {
                        continue;
                    }
                    let p = &probs[row * vocab..(row + 1) * vocab];
                    let dr = &mut d[row * vocab..(row + 1) * vocab];
                    for (dv, &pv) in dr.iter_mut().zip(p) {
                        *dv += scale * pv;
                    }
                    dr[t] -= scale;
                }
            }
        }
        Op::Sum(x) => {
            if let Some(d) = grad_slot(grads, nodes, *x) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(x) => {
            if let Some(d) = grad_slot(grads, nodes, *x) {
                let scale = g[0] / T::of(d.len() as f64);
                d.iter_mut().for_each(|d| *d += scale);
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu<T: Float>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    T::of(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Float>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    let t = u.tanh();
    let du = T::of(GELU_C) * (T::one() + T::of(3.0 * GELU_K) * x * x);
    T::of(0.5) * (T::one() + t) + T::of(0.5) * x * (T::one() - t * t) * du
}

struct MatDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Option<MatDims> {
    let (batch, a2, b2) = match (a.len(), b.len()) {
        (2, 2) => (1, a, b),
        (3, 3) if a[0] == b[0] => (a[0], &a[1..], &b[1..]),
        _ => return None,
    };
    let (m, k) = (a2[0], a2[1]);
    let (bk, n) = if trans_b { (b2[1], b2[0]) } else { (b2[0], b2[1]) };
    (k == bk).then_some(MatDims { batch, m, k, n })
}

/// Calls `f(out_index, in_index)` for every element of `in_shape` permuted by `perm`.
fn for_each_permuted(in_shape: &[usize], perm: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total: usize = in_shape.iter().product();
    let mut counter = vec![0usize; rank];
    let mut in_idx = 0usize;
    for out_idx in 0..total {
        f(out_idx, in_idx);
        for axis in (0..rank).rev() {
            counter[axis] += 1;
            in_idx += strides[axis];
            if counter[axis] < out_shape[axis] {
                break;
            }
            in_idx -= strides[axis] * out_shape[axis];
            counter[axis] = 0;
        }
    }
}

impl<'t, T: Float> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, parents: &[usize]) -> Var<'t, T> {
        self.tape.push(value, op, parents)
    }

    fn zip_with(&self, other: Var<'t, T>, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(op, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(a.shape().to_vec(), data)
    }

    fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        let a = self.value();
        Tensor::new(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
            .expect("same shape")
    }

    pub fn add(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_with(other, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(self.id, other.id), &[self.id, other.id]))
    }

    pub fn sub(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_with(other, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(self.id, other.id), &[self.id, other.id]))
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let v = self.zip_with(other, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(self.id, other.id), &[self.id, other.id]))
    }

    /// Adds a vector `bias[n]` to every row of `self[..., n]`.
    pub fn add_row(&self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, b) = (self.value(), bias.value());
        let n = b.len();
        if b.rank() != 1 || x.shape().last() != Some(&n) {
            return Err(Error::shape("add_row", x.shape(), b.shape()));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n) {
            row.iter_mut().zip(b.data()).for_each(|(v, &b)| *v += b);
        }
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(v, Op::AddRow(self.id, bias.id), &[self.id, bias.id]))
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        let v = self.map(|x| x * c);
        self.push(v, Op::Scale(self.id, c), &[self.id])
    }

    /// `[m,k]·[k,n]`, or batched `[b,m,k]·[b,k,n]`.
    pub fn matmul(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, false)
    }

    /// `self · otherᵀ`: `[m,k]·[n,k]ᵀ`, or batched `[b,m,k]·[b,n,k]ᵀ`.
    pub fn matmul_t(&self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        self.matmul_impl(other, true)
    }

    fn matmul_impl(&self, other: Var<'t, T>, trans_b: bool) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        let dims = matmul_dims(a.shape(), b.shape(), trans_b)
            .ok_or_else(|| Error::shape("matmul", a.shape(), b.shape()))?;
        let MatDims { batch, m, k, n } = dims;
        let mut out = vec![T::zero(); batch * m * n];
        let bs = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        for bi in 0..batch {
            T::gemm(
                m,
                k,
                n,
                &a.data()[bi * m * k..(bi + 1) * m * k],
                (k as isize, 1),
                &b.data()[bi * k * n..(bi + 1) * k * n],
                bs,
                T::zero(),
                &mut out[bi * m * n..(bi + 1) * m * n],
            );
        }
        let shape = if batch == 1 && a.rank() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        let v = Tensor::new(shape, out)?;
        Ok(self.push(
            v,
            Op::MatMul {
                a: self.id,
                b: other.id,
                trans_b,
            },
            &[self.id, other.id],
        ))
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        let v = self.map(|x| T::one() / (T::one() + (-x).exp()));
        self.push(v, Op::Sigmoid(self.id), &[self.id])
    }

    pub fn tanh(&self) -> Var<'t, T> {
        let v = self.map(|x| x.tanh());
        self.push(v, Op::Tanh(self.id), &[self.id])
    }

    /// Gaussian error linear unit (tanh approximation).
    pub fn gelu(&self) -> Var<'t, T> {
        let v = self.map(gelu);
        self.push(v, Op::Gelu(self.id), &[self.id])
    }

    fn check_axis(&self, axis: usize, op: &'static str) -> Result<Arc<Tensor<T>>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(Error::shape(op, x.shape(), &[axis]));
        }
        Ok(x)
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.check_axis(axis, "softmax")?;
        let mut data = x.data().to_vec();
        let (outer, len, inner) = axis_extents(x.shape(), axis);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| data[idx(l)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for l in 0..len {
                    let e = (data[idx(l)] - max).exp();
                    data[idx(l)] = e;
                    total += e;
                }
                for l in 0..len {
                    data[idx(l)] /= total;
                }
            }
        }
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(v, Op::Softmax { x: self.id, axis }, &[self.id]))
    }

    /// Log-softmax via a max-shifted log-sum-exp.
    pub fn log_softmax(&self, axis: usize) -> Result<Var<'t, T>> {
        let x = self.check_axis(axis, "log_softmax")?;
        let mut data = x.data().to_vec();
        let (outer, len, inner) = axis_extents(x.shape(), axis);
        for o in 0..outer {
            for i in 0..inner {
                let idx = |l: usize| (o * len + l) * inner + i;
                let lse = log_sum_exp((0..len).map(|l| data[idx(l)]));
                for l in 0..len {
                    data[idx(l)] -= lse;
                }
            }
        }
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(v, Op::LogSoftmax { x: self.id, axis }, &[self.id]))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias` (both `[n]`).
    pub fn layer_norm(&self, gain: Var<'t, T>, bias: Var<'t, T>, eps: f64) -> Result<Var<'t, T>> {
        let (x, gv, bv) = (self.value(), gain.value(), bias.value());
        let n = gv.len();
        if x.shape().last() != Some(&n) || gv.rank() != 1 || bv.shape() != gv.shape() {
            return Err(Error::shape("layer_norm", x.shape(), gv.shape()));
        }
        let rows = x.len() / n;
        let inv_n = T::one() / T::of(n as f64);
        let mut mean = Vec::with_capacity(rows);
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(x.len());
        for row in x.data().chunks(n) {
            let mu = row.iter().copied().sum::<T>() * inv_n;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() * inv_n;
            let r = T::one() / (var + T::of(eps)).sqrt();
            for ((&v, &g), &b) in row.iter().zip(gv.data()).zip(bv.data()) {
                out.push((v - mu) * r * g + b);
            }
            mean.push(mu);
            rstd.push(r);
        }
        let v = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(
            v,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                mean,
                rstd,
            },
            &[self.id, gain.id, bias.id],
        ))
    }

    /// Gathers rows of `self` (a `[V,d]` table) for `ids`, giving `[ids.len(), d]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Var<'t, T>> {
        let table = self.value();
        if table.rank() != 2 {
            return Err(Error::shape("embedding", table.shape(), &[ids.len()]));
        }
        let (rows, dim) = (table.shape()[0], table.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= rows {
                return Err(Error::shape("embedding", table.shape(), &[id]));
            }
            data.extend_from_slice(table.row(id));
        }
        let v = Tensor::new(vec![ids.len(), dim], data)?;
        Ok(self.push(
            v,
            Op::Embedding {
                table: self.id,
                ids: ids.to_vec(),
            },
            &[self.id],
        ))
    }

    pub fn concat(parts: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", &[], &[]))?;
        let base = first.check_axis(axis, "concat")?.shape().to_vec();
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let len = v.shape()[axis];
                data.extend_from_slice(&v.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let v = Tensor::new(shape, data)?;
        Ok(first.push(v, Op::Concat { parts: ids.clone(), axis }, &ids))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t, T>> {
        let x = self.check_axis(axis, "slice")?;
        if start > end || end > x.shape()[axis] {
            return Err(Error::shape("slice", x.shape(), &[start, end]));
        }
        let (outer, len, inner) = axis_extents(x.shape(), axis);
        let width = end - start;
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            data.extend_from_slice(&x.data()[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = width;
        let v = Tensor::new(shape, data)?;
        Ok(self.push(
            v,
            Op::Slice {
                x: self.id,
                axis,
                start,
            },
            &[self.id],
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = (*self.value()).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(self.id), &[self.id]))
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let mut seen = vec![false; x.rank()];
        let valid = perm.len() == x.rank()
            && perm
                .iter()
                .all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
        if !valid {
            return Err(Error::shape("permute", x.shape(), perm));
        }
        let mut data = vec![T::zero(); x.len()];
        for_each_permuted(x.shape(), perm, |o, i| data[o] = x.data()[i]);
        let shape = perm.iter().map(|&p| x.shape()[p]).collect();
        let v = Tensor::new(shape, data)?;
        Ok(self.push(
            v,
            Op::Permute {
                x: self.id,
                perm: perm.to_vec(),
            },
            &[self.id],
        ))
    }

    /// Inverted dropout: with an rng (training) zeroes each element with probability `p`
    /// and scales survivors by `1/(1-p)`; without one it is the identity.
    pub fn dropout<R: Rng>(&self, p: f64, rng: Option<&mut R>) -> Result<Var<'t, T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        let Some(rng) = rng.filter(|_| p > 0.0) else {
            return Ok(*self);
        };
        let keep = T::of(1.0 / (1.0 - p));
        let mask = (0..self.value().len())
            .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
            .collect();
        self.dropout_with_mask(mask)
    }

    /// Dropout with an explicit (already scaled) mask.
    pub fn dropout_with_mask(&self, mask: Vec<T>) -> Result<Var<'t, T>> {
        let x = self.value();
        if mask.len() != x.len() {
            return Err(Error::shape("dropout", x.shape(), &[mask.len()]));
        }
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let v = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(v, Op::Dropout { x: self.id, mask }, &[self.id]))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of
    /// `self[N,V]`, skipping rows whose target equals `ignore`. Zero when every row is ignored.
    pub fn cross_entropy(&self, targets: &[usize], ignore: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        if x.rank() != 2 || x.shape()[0] != targets.len() {
            return Err(Error::shape("cross_entropy", x.shape(), &[targets.len()]));
        }
        let vocab = x.shape()[1];
        let mut probs = vec![T::zero(); x.len()];
        let mut total = T::zero();
        let mut count = 0;
        for (row, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            if t >= vocab {
                return Err(Error::shape("cross_entropy", x.shape(), &[t]));
            }
            let logits = x.row(row);
            let lse = log_sum_exp(logits.iter().copied());
            for (p, &l) in probs[row * vocab..(row + 1) * vocab].iter_mut().zip(logits) {
                *p = (l - lse).exp();
            }
            total += lse - logits[t];
            count += 1;
        }
        let loss = if count == 0 {
            T::zero()
        } else {
            total / T::of(count as f64)
        };
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            &[self.id],
        ))
    }

    pub fn sum(&self) -> Var<'t, T> {
        let total = self.value().data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(self.id), &[self.id])
    }

    pub fn mean(&self) -> Var<'t, T> {
        let x = self.value();
        let total: T = x.data().iter().copied().sum();
        let v = Tensor::scalar(total / T::of(x.len().max(1) as f64));
        self.push(v, Op::Mean(self.id), &[self.id])
    }
}

/// Numerically stable `ln Σ exp(x)`.
pub fn log_sum_exp<T: Float>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    let total: T = values.map(|v| (v - max).exp()).sum();
    max + total.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let i = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        assert_eq!(a.matmul(i).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_t_matches_explicit_transpose() {
        let tape = Tape::new();
        let a = tape.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let b = tape.constant(t(&[4, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]));
        let bt = b.permute(&[1, 0]).unwrap();
        let direct = a.matmul_t(b).unwrap().value();
        assert_eq!(direct.shape(), &[2, 4]);
        assert_eq!(direct.data(), &[1.0, 2.0, 3.0, 6.0, 4.0, 5.0, 6.0, 15.0]);
        assert_eq!(direct.data(), a.matmul(bt).unwrap().value().data());
    }

    #[test]
    fn softmax_uniform_on_equal_inputs() {
        let tape = Tape::new();
        let x = tape.constant(t(&[3], &[0.0, 0.0, 0.0]));
        let y = x.softmax(0).unwrap().value();
        for &v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_of_two_equal_logits_is_ln2() {
        let tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[0.0, 0.0]));
        let loss = x.cross_entropy(&[0], usize::MAX).unwrap().item();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_ignores_marked_rows() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2, 2], &[0.0, 0.0, 5.0, -5.0]), true);
        let loss = x.cross_entropy(&[0, 9], 9).unwrap();
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-15);
        let g = tape.backward(loss).unwrap();
        assert_eq!(&g.wrt(x).unwrap().data()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]), true);
        let loss = x.mul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[2.0, 4.0, 6.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn constant_loss_gives_zero_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        let c = tape.constant(t(&[], &[4.0]));
        let g = tape.backward(c).unwrap();
        assert_eq!(g.wrt(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn two_consumers_sum_their_gradients() {
        let tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.5, -0.5]), true);
        // loss = sum(3x) + sum(tanh x)
        let a = x.scale(3.0).sum();
        let b = x.tanh().sum();
        let loss = Var::concat(&[a.reshape(&[1]).unwrap(), b.reshape(&[1]).unwrap()], 0)
            .unwrap()
            .sum();
        let g = tape.backward(loss).unwrap();
        for (gv, xv) in g.wrt(x).unwrap().data().iter().zip([1.5f64, -0.5]) {
            let expected = 3.0 + (1.0 - xv.tanh().powi(2));
            assert!((gv - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors_report_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        let b = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
        match a.matmul(b) {
            Err(Error::Shape { left, right, .. }) => {
                assert_eq!(left, vec![2, 3]);
                assert_eq!(right, vec![2, 3]);
            }
            other => panic!("expected shape error, got {:?}", other.map(|v| v.shape())),
        }
    }

    #[test]
    fn permute_round_trip() {
        let tape = Tape::new();
        let data: Vec<f64> = (0..24).map(f64::from).collect();
        let x = tape.constant(t(&[2, 3, 4], &data));
        let y = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(y.shape(), vec![4, 2, 3]);
        // y[k,i,j] = x[i,j,k]
        assert_eq!(y.value().data()[6 + 2], data[(2 * 4) + 1]);
        let back = y.permute(&[1, 2, 0]).unwrap();
        assert_eq!(back.value().data(), &data[..]);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1000], 1.0f64));
        let same = x.dropout::<ChaCha8Rng>(0.5, None).unwrap();
        assert_eq!(same.id(), x.id());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = x.dropout(0.5, Some(&mut rng)).unwrap().value();
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.data().iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let tape = Tape::new();
        let x = tape.constant(t(&[2, 3], &[1.0, -2.0, 0.5, 30.0, 31.0, 29.0]));
        let a = x.log_softmax(1).unwrap().value();
        let b = x.softmax(1).unwrap().value();
        for (l, p) in a.data().iter().zip(b.data()) {
            assert!((l - p.ln()).abs() < 1e-9);
        }
    }
}
