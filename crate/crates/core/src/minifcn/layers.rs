//! Per-sample tensor kernels: same-padded convolution (im2col + GEMM),
//! ReLU, 2x2 max-pooling, nearest x2 upsampling and channel concatenation.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive};

/// Floating-point element type of the network.
pub trait Real:
    Float + FromPrimitive + AddAssign + Sum + Default + Debug + Send + Sync + 'static
{
    /// `C = alpha * A B + beta * C` on strided row/column layouts.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing matrices of the
    /// given sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major matrix operand, optionally transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a, T> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    /// The transpose of a stored `rows x cols` matrix.
    pub fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c (m x n, row-major) = a b + beta c`.
pub(crate) fn gemm<T: Real>(a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(a.data.len(), a.rows * a.cols);
    assert_eq!(b.data.len(), b.rows * b.cols);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: lengths checked above; `c` is uniquely borrowed.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Feature maps of one sample: `channels x height x width`, x fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }
}

/// Expands `x` into a `(c*k*k) x (h*w)` column matrix for a same-padded `k x k` conv.
pub(crate) fn im2col<T: Real>(x: &Tensor<T>, k: usize) -> Vec<T> {
    if k == 1 {
        return x.data.clone();
    }
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let p = (k / 2) as isize;
    let mut cols = vec![T::zero(); x.c * k * k * hw];
    for ci in 0..x.c {
        let plane = &x.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - p;
            for kx in 0..k {
                let dx = kx as isize - p;
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w;
                    let dst = &mut row[y * w + x_lo..y * w + x_hi];
                    let s0 = (src as isize + x_lo as isize + dx) as usize;
                    dst.copy_from_slice(&plane[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
pub(crate) fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Tensor<T> {
    if k == 1 {
        return Tensor {
            c,
            h,
            w,
            data: cols.to_vec(),
        };
    }
    let hw = h * w;
    let p = (k / 2) as isize;
    let mut out = Tensor::zeros(c, h, w);
    for ci in 0..c {
        let plane = &mut out.data[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            let dy = ky as isize - p;
            for kx in 0..k {
                let dx = kx as isize - p;
                let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (sy as usize * w) as isize + x_lo as isize + dx;
                    let dst = &mut plane[s0 as usize..s0 as usize + (x_hi - x_lo)];
                    for (d, &g) in dst.iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                        *d += g;
                    }
                }
            }
        }
    }
    out
}

/// Same-padded convolution. Returns the output and the column matrix for backward.
pub(crate) fn conv_forward<T: Real>(
    x: &Tensor<T>,
    weight: &[T],
    bias: &[T],
    cout: usize,
    k: usize,
) -> (Tensor<T>, Vec<T>) {
    let hw = x.plane_len();
    let cols = im2col(x, k);
    let mut out = Tensor::zeros(cout, x.h, x.w);
    for (o, &b) in bias.iter().enumerate() {
        out.data[o * hw..(o + 1) * hw].fill(b);
    }
    gemm(
        Mat::new(weight, cout, x.c * k * k),
        Mat::new(&cols, x.c * k * k, hw),
        T::one(),
        &mut out.data,
    );
    (out, cols)
}

/// Accumulates weight/bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Real>(
    grad_out: &Tensor<T>,
    cols: &[T],
    weight: &[T],
    cin: usize,
    k: usize,
    grad_w: &mut [T],
    grad_b: &mut [T],
    need_input_grad: bool,
) -> Option<Tensor<T>> {
    let hw = grad_out.plane_len();
    let cout = grad_out.c;
    let kk = cin * k * k;
    gemm(
        Mat::new(&grad_out.data, cout, hw),
        Mat::new(cols, kk, hw).t(),
        T::one(),
        grad_w,
    );
    for (o, gb) in grad_b.iter_mut().enumerate() {
        *gb += grad_out.data[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
    }
    need_input_grad.then(|| {
        let mut dcols = vec![T::zero(); kk * hw];
        gemm(
            Mat::new(weight, cout, kk).t(),
            Mat::new(&grad_out.data, cout, hw),
            T::zero(),
            &mut dcols,
        );
        col2im(&dcols, cin, grad_out.h, grad_out.w, k)
    })
}

pub(crate) fn relu_inplace<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes gradients where the ReLU output was not positive.
pub(crate) fn relu_backward<T: Real>(grad: &mut Tensor<T>, out: &Tensor<T>) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max-pool with stride 2. Returns the pooled tensor and argmax offsets.
pub(crate) fn maxpool_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    let mut arg = vec![0u32; x.c * h2 * w2];
    for c in 0..x.c {
        let plane = &x.data[c * x.h * x.w..];
        for y in 0..h2 {
            for xx in 0..w2 {
                let base = 2 * y * x.w + 2 * xx;
                let cand = [base, base + 1, base + x.w, base + x.w + 1];
                let mut best = cand[0];
                for &i in &cand[1..] {
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
                let o = c * h2 * w2 + y * w2 + xx;
                out.data[o] = plane[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward<T: Real>(
    grad: &Tensor<T>,
    arg: &[u32],
    h: usize,
    w: usize,
) -> Tensor<T> {
    let mut out = Tensor::zeros(grad.c, h, w);
    let pl = grad.plane_len();
    for c in 0..grad.c {
        for j in 0..pl {
            let o = c * pl + j;
            out.data[c * h * w + arg[o] as usize] += grad.data[o];
        }
    }
    out
}

pub(crate) fn upsample_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (h2, w2) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h2, w2);
    for c in 0..x.c {
        for y in 0..h2 {
            let src = &x.data[c * x.h * x.w + (y / 2) * x.w..][..x.w];
            let dst = &mut out.data[c * h2 * w2 + y * w2..][..w2];
            for (i, d) in dst.iter_mut().enumerate() {
                *d = src[i / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample_backward<T: Real>(grad: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (grad.h / 2, grad.w / 2);
    let mut out = Tensor::zeros(grad.c, h, w);
    for c in 0..grad.c {
        for y in 0..grad.h {
            for x in 0..grad.w {
                out.data[c * h * w + (y / 2) * w + x / 2] +=
                    grad.data[c * grad.h * grad.w + y * grad.w + x];
            }
        }
    }
    out
}

pub(crate) fn concat<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor {
        c: a.c + b.c,
        h: a.h,
        w: a.w,
        data,
    }
}

/// Splits a concatenated gradient into the parts for `a` (first `ca` channels) and `b`.
pub(crate) fn split_concat<T: Real>(g: Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let n = ca * g.plane_len();
    let mut data = g.data;
    let tail = data.split_off(n);
    (
        Tensor {
            c: ca,
            h: g.h,
            w: g.w,
            data,
        },
        Tensor {
            c: g.c - ca,
            h: g.h,
            w: g.w,
            data: tail,
        },
    )
}
