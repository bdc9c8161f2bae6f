//! Forward kernels and the adjoint helpers the tape uses.
//!
//! Every kernel is a pure function of its inputs and reduces in a fixed order,
//! so repeated evaluation is bit-identical.

use super::tensor::{numel, Real, Tensor};
use crate::error::{Error, Result};

/// Row-major matrix view with arbitrary strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols as isize, cs: 1 }
    }

    /// View of a row-major `rows x cols` buffer, optionally transposed.
    pub fn stored(data: &'a [T], rows: usize, cols: usize, transposed: bool) -> Self {
        let m = Self::row_major(data, rows, cols);
        if transposed {
            m.t()
        } else {
            m
        }
    }

    pub fn t(self) -> Self {
        Self { data: self.data, rows: self.cols, cols: self.rows, rs: self.cs, cs: self.rs }
    }
}

/// `c = a * b + beta * c`, where `c` is addressed with strides `(rsc, csc)`.
pub(crate) fn gemm_into<T: Real>(
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
    rsc: isize,
    csc: isize,
) {
    assert_eq!(a.cols, b.rows, "gemm inner extent");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let span = |rows: usize, cols: usize, rs: isize, cs: isize| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows as isize - 1) * rs + (cols as isize - 1) * cs + 1
        }
    };
    assert!(span(m, k, a.rs, a.cs) as usize <= a.data.len());
    assert!(span(k, n, b.rs, b.cs) as usize <= b.data.len());
    assert!(span(m, n, rsc, csc) as usize <= c.len());
    if k == 0 {
        return;
    }
    // SAFETY: extents and strides were checked against the buffer lengths above,
    // and all strides are non-negative.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        )
    }
}

/// Standard matrix product of `[m, k]` and `[k, n]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape(
            "matmul",
            format!("cannot multiply {:?} by {:?}", a.shape(), b.shape()),
        ));
    }
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![T::ZERO; m * n];
    gemm_into(
        MatRef::row_major(a.data(), m, k),
        MatRef::row_major(b.data(), k, n),
        T::ZERO,
        &mut out,
        n as isize,
        1,
    );
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Extents of a batched product `[B, m, k] x [B, k, n]`, honoring stored transposes.
pub(crate) fn bmm_dims(
    a: &[usize],
    b: &[usize],
    trans_a: bool,
    trans_b: bool,
) -> Result<(usize, usize, usize, usize)> {
    if a.len() != 3 || b.len() != 3 || a[0] != b[0] {
        return Err(Error::shape("bmm", format!("{a:?} x {b:?}")));
    }
    let (m, ka) = if trans_a { (a[2], a[1]) } else { (a[1], a[2]) };
    let (kb, n) = if trans_b { (b[2], b[1]) } else { (b[1], b[2]) };
    if ka != kb {
        return Err(Error::shape(
            "bmm",
            format!("inner extents differ: {a:?}{} x {b:?}{}", t_mark(trans_a), t_mark(trans_b)),
        ));
    }
    Ok((a[0], m, ka, n))
}

fn t_mark(t: bool) -> &'static str {
    if t {
        "^T"
    } else {
        ""
    }
}

pub(crate) fn bmm<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    trans_a: bool,
    trans_b: bool,
) -> Result<Tensor<T>> {
    let (batch, m, k, n) = bmm_dims(a.shape(), b.shape(), trans_a, trans_b)?;
    let mut out = vec![T::ZERO; batch * m * n];
    let (sa, sb, sc) = (m * k, k * n, m * n);
    for i in 0..batch {
        let av = MatRef::stored(&a.data()[i * sa..(i + 1) * sa], a.shape()[1], a.shape()[2], trans_a);
        let bv = MatRef::stored(&b.data()[i * sb..(i + 1) * sb], b.shape()[1], b.shape()[2], trans_b);
        gemm_into(av, bv, T::ZERO, &mut out[i * sc..(i + 1) * sc], n as isize, 1);
    }
    Ok(Tensor::from_parts(vec![batch, m, n], out))
}

/// Softmax of `scale * x` over the trailing axis, stabilized by max-subtraction.
pub fn softmax_rows<T: Real>(x: &Tensor<T>, scale: f64) -> Tensor<T> {
    let (rows, n) = x.rows();
    let s = T::from_f64(scale);
    let mut out = vec![T::ZERO; x.len()];
    for r in 0..rows {
        let src = &x.data()[r * n..(r + 1) * n];
        let dst = &mut out[r * n..(r + 1) * n];
        let mut max = src[0] * s;
        for &v in &src[1..] {
            if v * s > max {
                max = v * s;
            }
        }
        let mut total = T::ZERO;
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v * s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

/// Geometry of a 2-d convolution over `[n, c_in, h, w]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], k: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (n, c_in, h, w) = match *x {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::shape("conv2d", format!("input must be rank 3 or 4, got {x:?}"))),
        };
        let [c_out, kc, kh, kw] = *k else {
            return Err(Error::shape("conv2d", format!("kernels must be rank 4, got {k:?}")));
        };
        if kc != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c_in} channels, kernels expect {kc}"),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if kh > ph || kw > pw {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} exceeds padded input {ph}x{pw}"),
            ));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("padded input {ph}x{pw} with kernel {kh}x{kw} is not a whole number of stride-{stride} steps"),
            ));
        }
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            oh: (ph - kh) / stride + 1,
            ow: (pw - kw) / stride + 1,
        })
    }

    pub fn out_shape(&self, batched: bool) -> Vec<usize> {
        if batched {
            vec![self.n, self.c_out, self.oh, self.ow]
        } else {
            vec![self.c_out, self.oh, self.ow]
        }
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Unfolds one image into a `[c_in*kh*kw, oh*ow]` column matrix.
    pub fn im2col<T: Real>(&self, img: &[T], col: &mut [T]) {
        let (oh, ow) = (self.oh, self.ow);
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.c_in {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::ZERO);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize { T::ZERO } else { src[ix as usize] };
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatters columns back, accumulating.
    pub fn col2im<T: Real>(&self, col: &[T], img: &mut [T]) {
        let (oh, ow) = (self.oh, self.ow);
        let p = self.positions();
        let mut row = 0;
        for c in 0..self.c_in {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let src = &col[row * p..(row + 1) * p];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                plane[iy as usize * self.w + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    pub fn forward<T: Real>(&self, x: &[T], k: &[T]) -> Vec<T> {
        let (patch, p) = (self.patch(), self.positions());
        let in_img = self.c_in * self.h * self.w;
        let out_img = self.c_out * p;
        let mut out = vec![T::ZERO; self.n * out_img];
        let mut col = vec![T::ZERO; patch * p];
        let kmat = MatRef::row_major(k, self.c_out, patch);
        for i in 0..self.n {
            self.im2col(&x[i * in_img..(i + 1) * in_img], &mut col);
            gemm_into(
                kmat,
                MatRef::row_major(&col, patch, p),
                T::ZERO,
                &mut out[i * out_img..(i + 1) * out_img],
                p as isize,
                1,
            );
        }
        out
    }

    /// Returns `(d_input, d_kernels)` for upstream gradient `g`.
    pub fn backward<T: Real>(&self, x: &[T], k: &[T], g: &[T], need_x: bool, need_k: bool) -> (Vec<T>, Vec<T>) {
        let (patch, p) = (self.patch(), self.positions());
        let in_img = self.c_in * self.h * self.w;
        let out_img = self.c_out * p;
        let mut dx = if need_x { vec![T::ZERO; self.n * in_img] } else { Vec::new() };
        let mut dk = vec![T::ZERO; if need_k { self.c_out * patch } else { 0 }];
        let mut col = vec![T::ZERO; patch * p];
        let kmat = MatRef::row_major(k, self.c_out, patch);
        for i in 0..self.n {
            let gi = MatRef::row_major(&g[i * out_img..(i + 1) * out_img], self.c_out, p);
            if need_k {
                self.im2col(&x[i * in_img..(i + 1) * in_img], &mut col);
                gemm_into(gi, MatRef::row_major(&col, patch, p).t(), T::ONE, &mut dk, patch as isize, 1);
            }
            if need_x {
                gemm_into(kmat.t(), gi, T::ZERO, &mut col, p as isize, 1);
                self.col2im(&col, &mut dx[i * in_img..(i + 1) * in_img]);
            }
        }
        (dx, dk)
    }
}

/// Cross-correlation with zero padding. Accepts `[c, h, w]` or `[n, c, h, w]` inputs.
pub fn conv2d<T: Real>(x: &Tensor<T>, kernels: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    let geom = ConvGeom::new(x.shape(), kernels.shape(), stride, padding)?;
    let out = geom.forward(x.data(), kernels.data());
    Ok(Tensor::from_parts(geom.out_shape(x.rank() == 4), out))
}

/// Geometry of average pooling over the two trailing axes.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub window: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolGeom {
    pub fn new(shape: &[usize], window: usize, stride: usize) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::shape("avgpool2d", format!("need at least 2 axes, got {shape:?}")));
        }
        if window == 0 || stride == 0 {
            return Err(Error::invalid("avgpool2d window and stride must be positive"));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        if window > h || window > w || (h - window) % stride != 0 || (w - window) % stride != 0 {
            return Err(Error::shape(
                "avgpool2d",
                format!("{h}x{w} is not divisible into {window}x{window} windows at stride {stride}"),
            ));
        }
        Ok(Self {
            planes: numel(&shape[..shape.len() - 2]),
            h,
            w,
            window,
            stride,
            oh: (h - window) / stride + 1,
            ow: (w - window) / stride + 1,
        })
    }

    pub fn out_shape(&self, shape: &[usize]) -> Vec<usize> {
        let mut s = shape[..shape.len() - 2].to_vec();
        s.extend([self.oh, self.ow]);
        s
    }

    pub fn forward<T: Real>(&self, x: &[T]) -> Vec<T> {
        let inv = T::from_f64(1.0 / (self.window * self.window) as f64);
        let mut out = vec![T::ZERO; self.planes * self.oh * self.ow];
        for p in 0..self.planes {
            let src = &x[p * self.h * self.w..(p + 1) * self.h * self.w];
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let mut acc = T::ZERO;
                    for dy in 0..self.window {
                        let row = (oy * self.stride + dy) * self.w + ox * self.stride;
                        for &v in &src[row..row + self.window] {
                            acc += v;
                        }
                    }
                    out[(p * self.oh + oy) * self.ow + ox] = acc * inv;
                }
            }
        }
        out
    }

    pub fn backward<T: Real>(&self, g: &[T]) -> Vec<T> {
        let inv = T::from_f64(1.0 / (self.window * self.window) as f64);
        let mut dx = vec![T::ZERO; self.planes * self.h * self.w];
        for p in 0..self.planes {
            let dst = &mut dx[p * self.h * self.w..(p + 1) * self.h * self.w];
            for oy in 0..self.oh {
                for ox in 0..self.ow {
                    let v = g[(p * self.oh + oy) * self.ow + ox] * inv;
                    for dy in 0..self.window {
                        let row = (oy * self.stride + dy) * self.w + ox * self.stride;
                        for d in &mut dst[row..row + self.window] {
                            *d += v;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Mean over each `window x window` patch of the two trailing axes.
pub fn avgpool2d<T: Real>(x: &Tensor<T>, window: usize, stride: usize) -> Result<Tensor<T>> {
    let geom = PoolGeom::new(x.shape(), window, stride)?;
    Ok(Tensor::from_parts(geom.out_shape(x.shape()), geom.forward(x.data())))
}

/// Axis permutation: output axis `i` is input axis `axes[i]`.
pub fn permute<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
        return Err(Error::shape("permute", format!("{axes:?} is not a permutation of rank {rank}")));
    }
    let in_shape = x.shape();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    let src = x.data();
    for _ in 0..x.len() {
        out.push(src[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Nearest-neighbour upsampling of the two trailing axes by an integer factor.
pub(crate) fn upsample_nearest<T: Real>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let s = x.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let planes = x.len() / (h * w);
    let (oh, ow) = (h * factor, w * factor);
    let mut out = vec![T::ZERO; planes * oh * ow];
    for p in 0..planes {
        for y in 0..oh {
            for xx in 0..ow {
                out[(p * oh + y) * ow + xx] = x.data()[(p * h + y / factor) * w + xx / factor];
            }
        }
    }
    let mut shape = s[..s.len() - 2].to_vec();
    shape.extend([oh, ow]);
    Tensor::from_parts(shape, out)
}

pub(crate) fn upsample_nearest_backward<T: Real>(g: &Tensor<T>, in_shape: &[usize], factor: usize) -> Tensor<T> {
    let (h, w) = (in_shape[in_shape.len() - 2], in_shape[in_shape.len() - 1]);
    let (oh, ow) = (h * factor, w * factor);
    let planes = numel(in_shape) / (h * w);
    let mut dx = vec![T::ZERO; numel(in_shape)];
    for p in 0..planes {
        for y in 0..oh {
            for xx in 0..ow {
                dx[(p * h + y / factor) * w + xx / factor] += g.data()[(p * oh + y) * ow + xx];
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(shape, v).unwrap()
    }

    #[test]
    fn matmul_identity_and_product() {
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(matmul(&eye, &a).unwrap(), a);
        let b = t(&[2, 2], &[5., 6., 7., 8.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let err = matmul(&a, &a).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_rows(&t(&[4], &[0.; 4]), 1.0);
        assert!(y.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let y = softmax_rows(&t(&[2], &[0., -1e9]), 1.0);
        assert!((y.data()[0] - 1.0).abs() < 1e-12 && y.data()[1].abs() < 1e-12);
        let y = softmax_rows(&t(&[2], &[1f64.ln(), 3f64.ln()]), 1.0);
        assert!((y.data()[0] - 0.25).abs() < 1e-12 && (y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn conv_examples() {
        let x = Tensor::<f64>::from_fn(&[1, 5, 5], |i| i as f64);
        let zero = Tensor::zeros(&[2, 1, 3, 3]);
        assert!(conv2d(&x, &zero, 1, 1).unwrap().data().iter().all(|&v| v == 0.0));
        let ident = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &ident, 1, 0).unwrap(), x);

        // One-hot at (2, 2); a 3x3 box kernel without padding touches it from every output.
        let mut onehot = Tensor::<f64>::zeros(&[1, 5, 5]);
        onehot.data_mut()[2 * 5 + 2] = 1.0;
        let boxk = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&onehot, &boxk, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 1.0));
        // With padding 1 the plateau sits on rows/cols 1..=3 of a 5x5 output.
        let y = conv2d(&onehot, &boxk, 1, 1).unwrap();
        for r in 0..5 {
            for c in 0..5 {
                let want = if (1..=3).contains(&r) && (1..=3).contains(&c) { 1.0 } else { 0.0 };
                assert_eq!(y.at(&[0, r, c]), want);
            }
        }
    }

    #[test]
    fn conv_rejects_non_integral_extent() {
        let x = Tensor::<f32>::zeros(&[1, 6, 6]);
        let k = Tensor::<f32>::zeros(&[1, 1, 3, 3]);
        assert!(conv2d(&x, &k, 2, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 3, 3]), 1, 0).is_err());
    }

    #[test]
    fn avgpool_examples() {
        let c = Tensor::<f64>::full(&[2, 4, 4], 3.5);
        assert!(avgpool2d(&c, 2, 2).unwrap().data().iter().all(|&v| v == 3.5));
        let x = t(&[2, 2], &[1., 3., 5., 7.]);
        assert_eq!(avgpool2d(&x, 2, 2).unwrap().data(), &[4.0]);
        assert!(avgpool2d(&Tensor::<f64>::zeros(&[3, 3]), 2, 2).is_err());
    }

    #[test]
    fn permute_round_trip() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        let p = permute(&x, &[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), x.at(&[1, 2, 3]));
        let back = permute(&p, &inverse_permutation(&[2, 0, 1])).unwrap();
        assert_eq!(back, x);
        assert!(permute(&x, &[0, 0, 1]).is_err());
    }
}
