//! Dense CPU kernels: valid 2-D convolution, 2x2 max pooling, ReLU and affine
//! layers, each with its backward pass. Feature maps are channel-planar.

use crate::scalar::Scalar;

/// A `channels x height x width` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.c, self.h, self.w]
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.h * self.w;
        &mut self.data[c * n..(c + 1) * n]
    }
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    // Eight independent partial sums let the compiler vectorize the loop.
    const LANES: usize = 8;
    let n = x.len().min(y.len());
    let (xs, xr) = x[..n].split_at(n - n % LANES);
    let (ys, yr) = y[..n].split_at(n - n % LANES);
    let mut acc = [T::zero(); LANES];
    for (xc, yc) in xs.chunks_exact(LANES).zip(ys.chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += xc[l] * yc[l];
        }
    }
    let mut tail = T::zero();
    for (&a, &b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    let quads = [
        acc[0] + acc[4],
        acc[1] + acc[5],
        acc[2] + acc[6],
        acc[3] + acc[7],
    ];
    (quads[0] + quads[2]) + (quads[1] + quads[3]) + tail
}

/// A strided read-only matrix view: element `(i, j)` is `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> View<'a, T> {
    fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.rows - 1) * self.rs + (self.cols - 1) * self.cs < self.data.len()
    }
}

/// `c <- a b + beta c` with `c` row-major `a.rows x b.cols`.
fn gemm<T: Scalar>(a: View<'_, T>, b: View<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert!(
        a.fits() && b.fits() && c.len() >= a.rows * b.cols,
        "gemm operand bounds"
    );
    // SAFETY: bounds checked above; `c` is a distinct mutable slice.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            T::one(),
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

/// Unrolls `k x k` patches into a `(C*k*k) x (oh*ow)` row-major matrix.
fn im2col<T: Scalar>(input: &Tensor3<T>, k: usize) -> Vec<T> {
    let (oh, ow) = (input.h + 1 - k, input.w + 1 - k);
    let mut cols = vec![T::zero(); input.c * k * k * oh * ow];
    let mut rows = cols.chunks_exact_mut(oh * ow);
    for c in 0..input.c {
        let src = input.plane(c);
        for ky in 0..k {
            for kx in 0..k {
                let dst = rows.next().expect("row count");
                for y in 0..oh {
                    dst[y * ow..][..ow].copy_from_slice(&src[(y + ky) * input.w + kx..][..ow]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch rows back onto a `c x h x w` map.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Tensor3<T> {
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut out = Tensor3::zeros(c, h, w);
    let mut rows = cols.chunks_exact(oh * ow);
    for ch in 0..c {
        let dst = out.plane_mut(ch);
        for ky in 0..k {
            for kx in 0..k {
                let src = rows.next().expect("row count");
                for y in 0..oh {
                    axpy(
                        T::one(),
                        &src[y * ow..][..ow],
                        &mut dst[(y + ky) * w + kx..][..ow],
                    );
                }
            }
        }
    }
    out
}

/// Valid (unpadded) stride-1 convolution.
///
/// `weight` is `[out][in][k][k]`, `bias` is `[out]`.
pub fn conv_forward<T: Scalar>(
    input: &Tensor3<T>,
    weight: &[T],
    bias: &[T],
    out_c: usize,
    k: usize,
) -> Tensor3<T> {
    let (in_c, ih, iw) = (input.c, input.h, input.w);
    debug_assert_eq!(weight.len(), out_c * in_c * k * k);
    let (oh, ow) = (ih + 1 - k, iw + 1 - k);
    let patch = in_c * k * k;
    let cols = im2col(input, k);
    let mut out = Tensor3::zeros(out_c, oh, ow);
    for (o, &b) in bias.iter().enumerate().take(out_c) {
        out.plane_mut(o).fill(b);
    }
    gemm(
        View::row_major(weight, out_c, patch),
        View::row_major(&cols, patch, oh * ow),
        T::one(),
        &mut out.data,
    );
    out
}

/// Accumulates weight and bias gradients of a valid convolution and, when
/// requested, returns the gradient with respect to its input.
pub fn conv_backward<T: Scalar>(
    input: &Tensor3<T>,
    grad_out: &Tensor3<T>,
    weight: &[T],
    k: usize,
    grad_weight: &mut [T],
    grad_bias: &mut [T],
    want_input_grad: bool,
) -> Option<Tensor3<T>> {
    let out_c = grad_out.c;
    let pixels = grad_out.h * grad_out.w;
    let patch = input.c * k * k;
    let cols = im2col(input, k);
    for (o, gb) in grad_bias.iter_mut().enumerate().take(out_c) {
        *gb += grad_out.plane(o).iter().copied().sum::<T>();
    }
    let go = View::row_major(&grad_out.data, out_c, pixels);
    gemm(
        go,
        View::row_major(&cols, patch, pixels).t(),
        T::one(),
        grad_weight,
    );
    want_input_grad.then(|| {
        let mut grad_cols = vec![T::zero(); patch * pixels];
        gemm(
            View::row_major(weight, out_c, patch).t(),
            go,
            T::zero(),
            &mut grad_cols,
        );
        col2im(&grad_cols, input.c, input.h, input.w, k)
    })
}

/// 2x2 stride-2 max pooling; odd trailing rows/columns are dropped.
///
/// Returns the pooled map and, per output cell, the flat input index of the
/// maximum (first in scan order on ties).
pub fn maxpool_forward<T: Scalar>(input: &Tensor3<T>) -> (Tensor3<T>, Vec<usize>) {
    let (oh, ow) = (input.h / 2, input.w / 2);
    let mut out = Tensor3::zeros(input.c, oh, ow);
    let mut arg = vec![0usize; input.c * oh * ow];
    for c in 0..input.c {
        let base = c * input.h * input.w;
        for y in 0..oh {
            for x in 0..ow {
                let cands = [
                    (2 * y) * input.w + 2 * x,
                    (2 * y) * input.w + 2 * x + 1,
                    (2 * y + 1) * input.w + 2 * x,
                    (2 * y + 1) * input.w + 2 * x + 1,
                ];
                let mut best = cands[0];
                for &i in &cands[1..] {
                    if input.data[base + i] > input.data[base + best] {
                        best = i;
                    }
                }
                let o = (c * oh + y) * ow + x;
                out.data[o] = input.data[base + best];
                arg[o] = base + best;
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor3<T>,
    argmax: &[usize],
    in_shape: [usize; 3],
) -> Tensor3<T> {
    let mut g = Tensor3::zeros(in_shape[0], in_shape[1], in_shape[2]);
    for (&i, &v) in argmax.iter().zip(&grad_out.data) {
        g.data[i] += v;
    }
    g
}

pub fn relu_inplace<T: Scalar>(xs: &mut [T]) {
    xs.iter_mut().for_each(|v| *v = v.max(T::zero()));
}

/// Zeroes gradient entries whose forward activation was not positive.
pub fn relu_backward_inplace<T: Scalar>(grad: &mut [T], activated: &[T]) {
    for (g, &a) in grad.iter_mut().zip(activated) {
        if a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// `y = W x + b` with `W` row-major `[out][in]`.
pub fn dense_forward<T: Scalar>(x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let n_in = x.len();
    weight
        .chunks(n_in)
        .zip(bias)
        .map(|(row, &b)| b + dot(row, x))
        .collect()
}

/// Accumulates dense-layer parameter gradients and returns `dL/dx`.
pub fn dense_backward<T: Scalar>(
    x: &[T],
    grad_out: &[T],
    weight: &[T],
    grad_weight: &mut [T],
    grad_bias: &mut [T],
) -> Vec<T> {
    let n_in = x.len();
    let mut gx = vec![T::zero(); n_in];
    for (o, &g) in grad_out.iter().enumerate() {
        grad_bias[o] += g;
        if g == T::zero() {
            continue;
        }
        axpy(g, x, &mut grad_weight[o * n_in..(o + 1) * n_in]);
        axpy(g, &weight[o * n_in..(o + 1) * n_in], &mut gx);
    }
    gx
}

/// Numerically stable two-way softmax.
pub fn softmax2<T: Scalar>(logits: [T; 2]) -> [T; 2] {
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}
