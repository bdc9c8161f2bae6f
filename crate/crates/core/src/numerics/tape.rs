//! Reverse-mode differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the tape itself is a topological
//! order of the graph and the backward sweep is a single reverse pass.

use std::collections::BTreeMap;

use super::kernels::{self, ConvGeom, MatRef, PoolGeom};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddAxis { x: Var, bias: Var, axis: usize },
    Bmm { a: Var, b: Var, trans_a: bool, trans_b: bool },
    Conv { x: Var, k: Var, geom: ConvGeom },
    Pool { x: Var, geom: PoolGeom },
    Upsample { x: Var, factor: usize },
    Silu(Var),
    Exp(Var),
    Recip(Var),
    Softmax { x: Var, scale: f64 },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Diagonal(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    requires_grad: bool,
}

/// Records operations and their values; [`Tape::backward`] returns parameter gradients.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients keyed by parameter name.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push((name.into(), v));
        v
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let s = T::from_f64(c);
        let v = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    /// Adds `bias[k]` to every element whose index along `axis` is `k`.
    pub fn add_axis(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || self.value(bias).len() != shape[axis] {
            return Err(Error::shape(
                "add_axis",
                format!("bias {:?} along axis {axis} of {shape:?}", self.shape(bias)),
            ));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(x).clone();
        for (i, e) in v.data_mut().iter_mut().enumerate() {
            *e += b[(i / inner) % n];
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(v, Op::AddAxis { x, bias, axis }, rg))
    }

    /// Batched product of rank-3 operands, `[B, m, k] x [B, k, n]`.
    /// `trans_*` marks an operand stored with its two trailing axes swapped.
    pub fn bmm(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let v = kernels::bmm(self.value(a), self.value(b), trans_a, trans_b)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(v, Op::Bmm { a, b, trans_a, trans_b }, rg))
    }

    /// Two-dimensional matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("cannot multiply {sa:?} by {sb:?}")));
        }
        let a3 = self.reshape(a, &[1, sa[0], sa[1]])?;
        let b3 = self.reshape(b, &[1, sb[0], sb[1]])?;
        let c = self.bmm(a3, b3, false, false)?;
        self.reshape(c, &[sa[0], sb[1]])
    }

    /// `x [.., in] * w [in, out] + b [out]`, flattening leading axes.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (rows, inner) = self.value(x).rows();
        let flat = self.reshape(x, &[rows, inner])?;
        let y = self.matmul(flat, w)?;
        let y = match b {
            Some(b) => self.add_axis(y, b, 1)?,
            None => y,
        };
        let mut out = shape;
        *out.last_mut().unwrap() = self.shape(w)[1];
        self.reshape(y, &out)
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(k), stride, pad)?;
        let out = geom.forward(self.value(x).data(), self.value(k).data());
        let v = Tensor::from_parts(geom.out_shape(self.value(x).rank() == 4), out);
        let rg = self.rg(x) || self.rg(k);
        Ok(self.push(v, Op::Conv { x, k, geom }, rg))
    }

    pub fn avgpool2d(&mut self, x: Var, window: usize, stride: usize) -> Result<Var> {
        let geom = PoolGeom::new(self.shape(x), window, stride)?;
        let v = Tensor::from_parts(geom.out_shape(self.shape(x)), geom.forward(self.value(x).data()));
        let rg = self.rg(x);
        Ok(self.push(v, Op::Pool { x, geom }, rg))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 || self.value(x).rank() < 2 {
            return Err(Error::invalid("upsample needs a positive factor and rank >= 2"));
        }
        let v = kernels::upsample_nearest(self.value(x), factor);
        let rg = self.rg(x);
        Ok(self.push(v, Op::Upsample { x, factor }, rg))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|z| z / (T::ONE + (-z).exp()));
        let rg = self.rg(x);
        self.push(v, Op::Silu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|z| z.exp());
        let rg = self.rg(x);
        self.push(v, Op::Exp(x), rg)
    }

    /// Elementwise `1 / x`.
    pub fn recip(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|z| T::ONE / z);
        let rg = self.rg(x);
        self.push(v, Op::Recip(x), rg)
    }

    pub fn softmax_rows(&mut self, x: Var, scale: f64) -> Var {
        let v = kernels::softmax_rows(self.value(x), scale);
        let rg = self.rg(x);
        self.push(v, Op::Softmax { x, scale }, rg)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = kernels::permute(self.value(x), axes)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Permute { x, axes: axes.to_vec() }, rg))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*xs.first().ok_or_else(|| Error::invalid("concat of nothing"))?).to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {first:?}")));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {first:?} along {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let chunk = self.shape(x)[axis] * inner;
                data.extend_from_slice(&self.value(x).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat { xs: xs.to_vec(), axis }, rg))
    }

    /// `[B, L, L] -> [B, L]` main diagonals.
    pub fn diagonal(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [b, l, l2] = s[..] else {
            return Err(Error::shape("diagonal", format!("need [B, L, L], got {s:?}")));
        };
        if l != l2 {
            return Err(Error::shape("diagonal", format!("need square trailing axes, got {s:?}")));
        }
        let src = self.value(x).data();
        let data = (0..b * l).map(|i| src[(i / l) * l * l + (i % l) * l + i % l]).collect();
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![b, l], data), Op::Diagonal(x), rg))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|z| z * z);
        let rg = self.rg(x);
        self.push(v, Op::Square(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(v, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).mean());
        let rg = self.rg(x);
        self.push(v, Op::Mean(x), rg)
    }

    /// Gradients of the scalar `loss` with respect to every registered parameter.
    ///
    /// Parameters the loss does not depend on receive zero gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::ONE));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }

        Ok(self
            .params
            .iter()
            .map(|(name, v)| {
                let g = grads
                    .get_mut(v.0)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(self.shape(*v)));
                (name.clone(), g)
            })
            .collect())
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, delta: Tensor<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|z| -z));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).clone(), val(*b).clone());
                acc(*a, g.zip_map(&vb, |x, y| x * y).unwrap());
                acc(*b, g.zip_map(&va, |x, y| x * y).unwrap());
            }
            Op::Scale(a, c) => {
                let s = T::from_f64(*c);
                acc(*a, g.map(|z| z * s));
            }
            Op::AddAxis { x, bias, axis } => {
                acc(*x, g.clone());
                let shape = g.shape();
                let inner: usize = shape[axis + 1..].iter().product();
                let n = shape[*axis];
                let mut db = vec![T::ZERO; n];
                for (i, &e) in g.data().iter().enumerate() {
                    db[(i / inner) % n] += e;
                }
                acc(*bias, Tensor::from_parts(val(*bias).shape().to_vec(), db));
            }
            Op::Bmm { a, b, trans_a, trans_b } => {
                let (ta, tb) = (val(*a), val(*b));
                let (batch, m, k, n) =
                    kernels::bmm_dims(ta.shape(), tb.shape(), *trans_a, *trans_b).unwrap();
                let (sa, sb, sc) = (m * k, k * n, m * n);
                let (a_rows, a_cols) = (ta.shape()[1], ta.shape()[2]);
                let (b_rows, b_cols) = (tb.shape()[1], tb.shape()[2]);
                if self.rg(*a) {
                    // dA_eff[m,k] = G[m,n] * B_eff^T, written through A's storage strides.
                    let mut da = vec![T::ZERO; ta.len()];
                    let (rs, cs) = if *trans_a { (1, m as isize) } else { (k as isize, 1) };
                    for i in 0..batch {
                        let gv = MatRef::row_major(&g.data()[i * sc..(i + 1) * sc], m, n);
                        let bv = MatRef::stored(&tb.data()[i * sb..(i + 1) * sb], b_rows, b_cols, *trans_b);
                        kernels::gemm_into(gv, bv.t(), T::ZERO, &mut da[i * sa..(i + 1) * sa], rs, cs);
                    }
                    acc(*a, Tensor::from_parts(ta.shape().to_vec(), da));
                }
                if self.rg(*b) {
                    // dB_eff[k,n] = A_eff^T * G.
                    let mut db = vec![T::ZERO; tb.len()];
                    let (rs, cs) = if *trans_b { (1, k as isize) } else { (n as isize, 1) };
                    for i in 0..batch {
                        let gv = MatRef::row_major(&g.data()[i * sc..(i + 1) * sc], m, n);
                        let av = MatRef::stored(&ta.data()[i * sa..(i + 1) * sa], a_rows, a_cols, *trans_a);
                        kernels::gemm_into(av.t(), gv, T::ZERO, &mut db[i * sb..(i + 1) * sb], rs, cs);
                    }
                    acc(*b, Tensor::from_parts(tb.shape().to_vec(), db));
                }
            }
            Op::Conv { x, k, geom } => {
                let (need_x, need_k) = (self.rg(*x), self.rg(*k));
                let (dx, dk) = geom.backward(val(*x).data(), val(*k).data(), g.data(), need_x, need_k);
                if need_x {
                    acc(*x, Tensor::from_parts(val(*x).shape().to_vec(), dx));
                }
                if need_k {
                    acc(*k, Tensor::from_parts(val(*k).shape().to_vec(), dk));
                }
            }
            Op::Pool { x, geom } => {
                acc(*x, Tensor::from_parts(val(*x).shape().to_vec(), geom.backward(g.data())));
            }
            Op::Upsample { x, factor } => {
                acc(*x, kernels::upsample_nearest_backward(g, val(*x).shape(), *factor));
            }
            Op::Silu(x) => {
                let dx = g
                    .zip_map(val(*x), |gz, z| {
                        let s = T::ONE / (T::ONE + (-z).exp());
                        gz * (s + z * s * (T::ONE - s))
                    })
                    .unwrap();
                acc(*x, dx);
            }
            Op::Exp(x) => {
                acc(*x, g.zip_map(&node.value, |gz, y| gz * y).unwrap());
            }
            Op::Recip(x) => {
                acc(*x, g.zip_map(&node.value, |gz, y| -gz * y * y).unwrap());
            }
            Op::Softmax { x, scale } => {
                let y = &node.value;
                let (rows, n) = y.rows();
                let s = T::from_f64(*scale);
                let mut dx = vec![T::ZERO; y.len()];
                for r in 0..rows {
                    let yr = &y.data()[r * n..(r + 1) * n];
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let dot = yr.iter().zip(gr).fold(T::ZERO, |a, (&p, &q)| a + p * q);
                    for j in 0..n {
                        dx[r * n + j] = s * yr[j] * (gr[j] - dot);
                    }
                }
                acc(*x, Tensor::from_parts(y.shape().to_vec(), dx));
            }
            Op::Reshape(x) => {
                acc(*x, g.clone().reshape(val(*x).shape()).unwrap());
            }
            Op::Permute { x, axes } => {
                acc(*x, kernels::permute(g, &kernels::inverse_permutation(axes)).unwrap());
            }
            Op::Concat { xs, axis } => {
                let shape = g.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for &x in xs {
                    let chunk = val(x).shape()[*axis] * inner;
                    let mut d = Vec::with_capacity(val(x).len());
                    for o in 0..outer {
                        d.extend_from_slice(&g.data()[o * total + offset..o * total + offset + chunk]);
                    }
                    offset += chunk;
                    acc(x, Tensor::from_parts(val(x).shape().to_vec(), d));
                }
            }
            Op::Diagonal(x) => {
                let s = val(*x).shape();
                let l = s[1];
                let mut dx = vec![T::ZERO; val(*x).len()];
                for (i, &e) in g.data().iter().enumerate() {
                    dx[(i / l) * l * l + (i % l) * l + i % l] = e;
                }
                acc(*x, Tensor::from_parts(s.to_vec(), dx));
            }
            Op::Square(x) => {
                let two = T::from_f64(2.0);
                acc(*x, g.zip_map(val(*x), |gz, z| two * gz * z).unwrap());
            }
            Op::Sum(x) => {
                acc(*x, Tensor::full(val(*x).shape(), g.item()));
            }
            Op::Mean(x) => {
                let n = T::from_f64(val(*x).len() as f64);
                acc(*x, Tensor::full(val(*x).shape(), g.item() / n));
            }
        }
    }
}
