use super::kernels::{self, ConvDims};
use super::{broadcast_offsets, broadcast_shape, strides, Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Conv3x3 { x: Var, w: Var, bias: Var },
    Gelu(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    Gather { x: Var, index: Vec<usize> },
    Reshape(Var),
}

/// A node of the differentiation graph: a value plus how it was produced.
#[derive(Debug)]
pub struct DiffTensor<T> {
    value: Tensor<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    op: Op<T>,
}

impl<T: Real> DiffTensor<T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.op, Op::Leaf)
    }
}

/// Append-only differentiation graph. Nodes are created in topological order,
/// so the graph is acyclic by construction and backward is a reverse sweep.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<DiffTensor<T>>,
    macs: u64,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), macs: 0 }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulate operations executed by forward matmuls and convolutions so far.
    pub fn mac_count(&self) -> u64 {
        self.macs
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| Tensor::zeros(value.shape()));
        self.nodes.push(DiffTensor { value, requires_grad, grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn node(&self, v: Var) -> &DiffTensor<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Resets accumulated leaf gradients to zero.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = n.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|v| *v = T::zero());
            }
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(DiffTensor { value, requires_grad, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, Vec<usize>)> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
            return Ok((Tensor::new(av.shape().to_vec(), data)?, av.shape().to_vec()));
        }
        let shape = broadcast_shape(name, av.shape(), bv.shape())?;
        let oa = broadcast_offsets(av.shape(), &shape);
        let ob = broadcast_offsets(bv.shape(), &shape);
        let data = oa
            .iter()
            .zip(&ob)
            .map(|(&i, &j)| f(av.data()[i], bv.data()[j]))
            .collect();
        Ok((Tensor::new(shape.clone(), data)?, shape))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, _) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, _) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (value, _) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64_lossy(c);
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    /// Batched matrix product over the trailing two dims; leading dims broadcast.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let plan = MatmulPlan::new(self.value(a).shape(), self.value(b).shape())?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); plan.out_shape.iter().product()];
        let (m, k, n) = (plan.m, plan.k, plan.n);
        for (bi, o) in out.chunks_mut(m * n).enumerate() {
            let (ia, ib) = (plan.a_batch[bi], plan.b_batch[bi]);
            kernels::matmul_2d(
                &av[ia * m * k..(ia + 1) * m * k],
                &bv[ib * k * n..(ib + 1) * k * n],
                o,
                m,
                k,
                n,
            );
        }
        self.macs += (plan.batches() * m * k * n) as u64;
        let value = Tensor::new(plan.out_shape, out)?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.rank() {
            return Err(TensorError::Axis { op: "softmax", axis, rank: xv.rank() });
        }
        let mut out = vec![T::zero(); xv.numel()];
        kernels::softmax(xv.data(), &mut out, kernels::axis_extents(xv.shape(), axis));
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax { x, axis }, &[x]))
    }

    /// Normalizes over the last dimension, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(TensorError::Param(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let c = *xv.shape().last().unwrap();
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(TensorError::Shape {
                op: "layer_norm",
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); xv.numel()];
        let (xhat, rstd) =
            kernels::layer_norm(xv.data(), gv.data(), bv.data(), T::from_f64_lossy(eps), &mut out);
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta]))
    }

    /// Zero-padded 3×3 cross-correlation: x H×W×Cin, w 3×3×Cin×Cout, bias Cout.
    pub fn conv2d_3x3(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(bias));
        let (xs, ws) = (xv.shape(), wv.shape());
        let ok = xs.len() == 3
            && ws.len() == 4
            && ws[0] == 3
            && ws[1] == 3
            && ws[2] == xs[2]
            && bv.shape() == [ws[3]];
        if !ok {
            return Err(TensorError::Shape { op: "conv2d_3x3", lhs: xs.to_vec(), rhs: ws.to_vec() });
        }
        let d = ConvDims { h: xs[0], w: xs[1], cin: xs[2], cout: ws[3] };
        let mut out = vec![T::zero(); d.h * d.w * d.cout];
        kernels::conv3x3(xv.data(), wv.data(), bv.data(), &mut out, &d);
        self.macs += (d.h * d.w * 9 * d.cin * d.cout) as u64;
        let value = Tensor::new(vec![d.h, d.w, d.cout], out)?;
        Ok(self.push(value, Op::Conv3x3 { x, w, bias }, &[x, w, bias]))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::gelu);
        self.push(value, Op::Gelu(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        self.push(value, Op::Abs(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = T::from_usize(xv.numel()).unwrap();
        let s = xv.data().iter().copied().sum::<T>() / n;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// `out[i] = x[index[i]]` reshaped to `shape`. Backward scatters with accumulation.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= xv.numel()) {
            return Err(TensorError::Contract(format!(
                "gather index {bad} out of bounds for {} elements",
                xv.numel()
            )));
        }
        let data = index.iter().map(|&i| xv.data()[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(value, Op::Gather { x, index }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len() || axes.iter().any(|&a| a >= shape.len() || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::Contract(format!(
                "permute axes {axes:?} invalid for rank {}",
                shape.len()
            )));
        }
        let in_strides = strides(&shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let numel: usize = shape.iter().product();
        let mut index = Vec::with_capacity(numel);
        let mut idx = vec![0usize; out_shape.len()];
        for _ in 0..numel {
            index.push(idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum());
            for d in (0..idx.len()).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        self.gather(x, index, &out_shape)
    }

    /// Swaps the two trailing axes.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(TensorError::Axis { op: "transpose_last", axis: 1, rank: r });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(x, &axes)
    }

    /// Reverse-mode sweep from a scalar `loss`. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((i, g));
                continue;
            }
            for (parent, contrib) in self.vjp(i, &g) {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match grads[parent.0].as_mut() {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, &c)| *a = *a + c),
                    None => grads[parent.0] = Some(contrib),
                }
            }
        }

        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            let slot = node.grad.get_or_insert_with(|| Tensor::zeros(node.value.shape()));
            slot.data_mut().iter_mut().zip(&g).for_each(|(a, &c)| *a = *a + c);
        }
        Ok(())
    }

    fn vjp(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let out_shape = node.value.shape();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => {
                let mut r = Vec::new();
                if wants(*a) {
                    r.push((*a, self.unbroadcast(g, out_shape, *a, T::one())));
                }
                if wants(*b) {
                    r.push((*b, self.unbroadcast(g, out_shape, *b, T::one())));
                }
                r
            }
            Op::Sub(a, b) => {
                let mut r = Vec::new();
                if wants(*a) {
                    r.push((*a, self.unbroadcast(g, out_shape, *a, T::one())));
                }
                if wants(*b) {
                    r.push((*b, self.unbroadcast(g, out_shape, *b, -T::one())));
                }
                r
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let oa = broadcast_offsets(av.shape(), out_shape);
                let ob = broadcast_offsets(bv.shape(), out_shape);
                let mut r = Vec::new();
                if wants(*a) {
                    let mut da = vec![T::zero(); av.numel()];
                    for (k, &gk) in g.iter().enumerate() {
                        da[oa[k]] = da[oa[k]] + gk * bv.data()[ob[k]];
                    }
                    r.push((*a, da));
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); bv.numel()];
                    for (k, &gk) in g.iter().enumerate() {
                        db[ob[k]] = db[ob[k]] + gk * av.data()[oa[k]];
                    }
                    r.push((*b, db));
                }
                r
            }
            Op::Scale(x, c) => vec![(*x, g.iter().map(|&v| v * *c).collect())],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let plan = MatmulPlan::new(av.shape(), bv.shape()).expect("validated in forward");
                let (m, k, n) = (plan.m, plan.k, plan.n);
                let mut r = Vec::new();
                if wants(*a) {
                    let mut da = vec![T::zero(); av.numel()];
                    for (bi, gb) in g.chunks(m * n).enumerate() {
                        let (ia, ib) = (plan.a_batch[bi], plan.b_batch[bi]);
                        kernels::matmul_grad_a(
                            gb,
                            &bv.data()[ib * k * n..(ib + 1) * k * n],
                            &mut da[ia * m * k..(ia + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                    r.push((*a, da));
                }
                if wants(*b) {
                    let mut db = vec![T::zero(); bv.numel()];
                    if plan.b_shared() {
                        // every batch hits the same right operand: fold batches into rows
                        let rows = plan.batches() * m;
                        if plan.a_contiguous() {
                            kernels::matmul_grad_b(&av.data()[..rows * k], g, &mut db, rows, k, n);
                        } else {
                            for (bi, gb) in g.chunks(m * n).enumerate() {
                                let ia = plan.a_batch[bi];
                                kernels::matmul_grad_b(&av.data()[ia * m * k..(ia + 1) * m * k], gb, &mut db, m, k, n);
                            }
                        }
                    } else {
                        for (bi, gb) in g.chunks(m * n).enumerate() {
                            let (ia, ib) = (plan.a_batch[bi], plan.b_batch[bi]);
                            kernels::matmul_grad_b(
                                &av.data()[ia * m * k..(ia + 1) * m * k],
                                gb,
                                &mut db[ib * k * n..(ib + 1) * k * n],
                                m,
                                k,
                                n,
                            );
                        }
                    }
                    r.push((*b, db));
                }
                r
            }
            Op::Softmax { x, axis } => {
                let mut dx = vec![T::zero(); g.len()];
                kernels::softmax_grad(
                    node.value.data(),
                    g,
                    &mut dx,
                    kernels::axis_extents(out_shape, *axis),
                );
                vec![(*x, dx)]
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let gv = self.value(*gamma).data();
                let c = gv.len();
                let cf = T::from_usize(c).unwrap();
                let mut r = Vec::new();
                if wants(*x) {
                    let mut dx = vec![T::zero(); g.len()];
                    for (row, ((gr, xh), dxr)) in
                        g.chunks(c).zip(xhat.chunks(c)).zip(dx.chunks_mut(c)).enumerate()
                    {
                        let dxhat: Vec<T> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                        let m1 = dxhat.iter().copied().sum::<T>() / cf;
                        let m2 = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / cf;
                        for j in 0..c {
                            dxr[j] = rstd[row] * (dxhat[j] - m1 - xh[j] * m2);
                        }
                    }
                    r.push((*x, dx));
                }
                if wants(*gamma) {
                    let mut dg = vec![T::zero(); c];
                    for (gr, xh) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] = dg[j] + gr[j] * xh[j];
                        }
                    }
                    r.push((*gamma, dg));
                }
                if wants(*beta) {
                    let mut db = vec![T::zero(); c];
                    for gr in g.chunks(c) {
                        db.iter_mut().zip(gr).for_each(|(a, &v)| *a = *a + v);
                    }
                    r.push((*beta, db));
                }
                r
            }
            Op::Conv3x3 { x, w, bias } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let xs = xv.shape();
                let d = ConvDims { h: xs[0], w: xs[1], cin: xs[2], cout: wv.shape()[3] };
                let mut r = Vec::new();
                if wants(*x) {
                    let mut dx = vec![T::zero(); xv.numel()];
                    kernels::conv3x3_grad_x(g, wv.data(), &mut dx, &d);
                    r.push((*x, dx));
                }
                if wants(*w) {
                    let mut dw = vec![T::zero(); wv.numel()];
                    kernels::conv3x3_grad_w(xv.data(), g, &mut dw, &d);
                    r.push((*w, dw));
                }
                if wants(*bias) {
                    let mut db = vec![T::zero(); d.cout];
                    for gr in g.chunks(d.cout) {
                        db.iter_mut().zip(gr).for_each(|(a, &v)| *a = *a + v);
                    }
                    r.push((*bias, db));
                }
                r
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                vec![(*x, g.iter().zip(xv).map(|(&gv, &v)| gv * kernels::gelu_grad(v)).collect())]
            }
            Op::Abs(x) => {
                let xv = self.value(*x).data();
                let dx = g
                    .iter()
                    .zip(xv)
                    .map(|(&gv, &v)| if v > T::zero() { gv } else if v < T::zero() { -gv } else { T::zero() })
                    .collect();
                vec![(*x, dx)]
            }
            Op::Sum(x) => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                vec![(*x, vec![g[0] / T::from_usize(n).unwrap(); n])]
            }
            Op::Gather { x, index } => {
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (&src, &gv) in index.iter().zip(g) {
                    dx[src] = dx[src] + gv;
                }
                vec![(*x, dx)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
        }
    }

    /// Sums `g` (shaped like the output) down to the shape of `src`.
    fn unbroadcast(&self, g: &[T], out_shape: &[usize], src: Var, sign: T) -> Vec<T> {
        let sv = self.value(src);
        if sv.shape() == out_shape {
            return g.iter().map(|&v| v * sign).collect();
        }
        let offs = broadcast_offsets(sv.shape(), out_shape);
        let mut d = vec![T::zero(); sv.numel()];
        for (k, &v) in g.iter().enumerate() {
            d[offs[k]] = d[offs[k]] + v * sign;
        }
        d
    }
}

struct MatmulPlan {
    m: usize,
    k: usize,
    n: usize,
    out_shape: Vec<usize>,
    a_batch: Vec<usize>,
    b_batch: Vec<usize>,
}

impl MatmulPlan {
    fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let err = || TensorError::Shape { op: "matmul", lhs: a.to_vec(), rhs: b.to_vec() };
        if a.len() < 2 || b.len() < 2 {
            return Err(err());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != k2 {
            return Err(err());
        }
        let (la, lb) = (&a[..a.len() - 2], &b[..b.len() - 2]);
        let batch = broadcast_shape("matmul", la, lb).map_err(|_| err())?;
        let a_batch = if batch.is_empty() { vec![0] } else { broadcast_offsets(la, &batch) };
        let b_batch = if batch.is_empty() { vec![0] } else { broadcast_offsets(lb, &batch) };
        let mut out_shape = batch;
        out_shape.extend([m, n]);
        Ok(Self { m, k, n, out_shape, a_batch, b_batch })
    }

    fn batches(&self) -> usize {
        self.a_batch.len()
    }

    fn b_shared(&self) -> bool {
        self.b_batch.iter().all(|&i| i == self.b_batch[0])
    }

    fn a_contiguous(&self) -> bool {
        self.a_batch.iter().enumerate().all(|(i, &j)| i == j)
    }
}
