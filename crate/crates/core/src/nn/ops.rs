//! Primitive tensor operations and their gradients.
//!
//! Matrices are row-major. Image tensors are `[channels, height, width]`.

use crate::scalar::Scalar;

pub const LRELU_SLOPE: f64 = 0.01;

/// `y = max(slope * x, x)`.
#[inline]
pub fn lrelu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::of(LRELU_SLOPE)
    }
}

/// Derivative of [`lrelu`]; the slope is used at zero.
#[inline]
pub fn lrelu_grad<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::of(LRELU_SLOPE)
    }
}

pub fn lrelu_inplace<T: Scalar>(v: &mut [T]) {
    let s = T::of(LRELU_SLOPE);
    for x in v {
        if *x <= T::zero() {
            *x = *x * s;
        }
    }
}

/// Multiplies `grad` by the activation derivative, read off the activation
/// output `y` (which has the sign of its input).
pub fn lrelu_backward<T: Scalar>(y: &[T], grad: &mut [T]) {
    let s = T::of(LRELU_SLOPE);
    for (g, &y) in grad.iter_mut().zip(y) {
        if y <= T::zero() {
            *g = *g * s;
        }
    }
}

/// `y[n, out] = x[n, inp] * w[out, inp]^T + b`.
pub fn linear_forward<T: Scalar>(x: &[T], n: usize, inp: usize, out: usize, w: &[T], b: &[T], y: &mut [T]) {
    for row in y.chunks_exact_mut(out) {
        row.copy_from_slice(b);
    }
    T::gemm(
        n,
        inp,
        out,
        T::one(),
        x,
        inp as isize,
        1,
        w,
        1,
        inp as isize,
        T::one(),
        y,
        out as isize,
        1,
    );
}

/// Accumulates weight and bias gradients and, when requested, writes the
/// input gradient.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Scalar>(
    x: &[T],
    n: usize,
    inp: usize,
    out: usize,
    w: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
) {
    T::gemm(
        out,
        n,
        inp,
        T::one(),
        dy,
        1,
        out as isize,
        x,
        inp as isize,
        1,
        T::one(),
        dw,
        inp as isize,
        1,
    );
    for row in dy.chunks_exact(out) {
        for (g, &d) in db.iter_mut().zip(row) {
            *g = *g + d;
        }
    }
    if let Some(dx) = dx {
        T::gemm(
            n,
            out,
            inp,
            T::one(),
            dy,
            out as isize,
            1,
            w,
            inp as isize,
            1,
            T::zero(),
            dx,
            inp as isize,
            1,
        );
    }
}

/// Unfolds 3x3 zero-padded neighbourhoods: `cols[c * 9 + k, h * width + w]`.
pub fn im2col3<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let src = &x[ch * hw..(ch + 1) * hw];
        for k in 0..9 {
            let (dy, dx) = (k as isize / 3 - 1, k as isize % 3 - 1);
            let dst = &mut cols[(ch * 9 + k) * hw..(ch * 9 + k + 1) * hw];
            for r in 0..h {
                let sr = r as isize + dy;
                let drow = &mut dst[r * w..(r + 1) * w];
                if sr < 0 || sr >= h as isize {
                    drow.fill(T::zero());
                    continue;
                }
                let srow = &src[sr as usize * w..(sr as usize + 1) * w];
                let (lo, hi) = valid_cols(w, dx);
                drow[..lo].fill(T::zero());
                drow[hi..].fill(T::zero());
                drow[lo..hi].copy_from_slice(&srow[(lo as isize + dx) as usize..(hi as isize + dx) as usize]);
            }
        }
    }
}

/// Output columns whose neighbour at offset `dx` lies inside a row of `w`.
fn valid_cols(w: usize, dx: isize) -> (usize, usize) {
    let lo = (-dx).max(0) as usize;
    let hi = (w as isize - dx).clamp(lo as isize, w as isize) as usize;
    (lo, hi)
}

/// Adjoint of [`im2col3`]: accumulates `cols` back into `dx`.
pub fn col2im3<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, dx: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let dst = &mut dx[ch * hw..(ch + 1) * hw];
        for k in 0..9 {
            let (dy, dxo) = (k as isize / 3 - 1, k as isize % 3 - 1);
            let src = &cols[(ch * 9 + k) * hw..(ch * 9 + k + 1) * hw];
            for r in 0..h {
                let sr = r as isize + dy;
                if sr < 0 || sr >= h as isize {
                    continue;
                }
                let srow = &src[r * w..(r + 1) * w];
                let drow = &mut dst[sr as usize * w..(sr as usize + 1) * w];
                let (lo, hi) = valid_cols(w, dxo);
                let target = &mut drow[(lo as isize + dxo) as usize..(hi as isize + dxo) as usize];
                for (d, &g) in target.iter_mut().zip(&srow[lo..hi]) {
                    *d = *d + g;
                }
            }
        }
    }
}

/// Same-size 3x3 convolution of one image: `y[cout, h*w]`.
#[allow(clippy::too_many_arguments)]
pub fn conv3_forward<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    weight: &[T],
    bias: &[T],
    y: &mut [T],
    cols: &mut Vec<T>,
) {
    let hw = h * w;
    cols.resize(cin * 9 * hw, T::zero());
    im2col3(x, cin, h, w, cols);
    for (row, &b) in y.chunks_exact_mut(hw).zip(bias) {
        row.fill(b);
    }
    let k = cin * 9;
    T::gemm(
        cout,
        k,
        hw,
        T::one(),
        weight,
        k as isize,
        1,
        cols,
        hw as isize,
        1,
        T::one(),
        y,
        hw as isize,
        1,
    );
}

/// Gradients of [`conv3_forward`] for one image. Weight and bias gradients
/// accumulate; the input gradient is overwritten.
#[allow(clippy::too_many_arguments)]
pub fn conv3_backward<T: Scalar>(
    x: &[T],
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    weight: &[T],
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
    cols: &mut Vec<T>,
) {
    let hw = h * w;
    let k = cin * 9;
    cols.resize(k * hw, T::zero());
    im2col3(x, cin, h, w, cols);
    T::gemm(
        cout,
        hw,
        k,
        T::one(),
        dy,
        hw as isize,
        1,
        cols,
        1,
        hw as isize,
        T::one(),
        dw,
        k as isize,
        1,
    );
    for (g, row) in db.iter_mut().zip(dy.chunks_exact(hw)) {
        *g = *g + row.iter().copied().sum::<T>();
    }
    if let Some(dx) = dx {
        T::gemm(
            k,
            cout,
            hw,
            T::one(),
            weight,
            1,
            k as isize,
            dy,
            hw as isize,
            1,
            T::zero(),
            cols,
            hw as isize,
            1,
        );
        dx.fill(T::zero());
        col2im3(cols, cin, h, w, dx);
    }
}

/// Output side of a ceiling-mode pool with window equal to its stride.
pub fn pool_out(size: usize, stride: usize) -> usize {
    size.div_ceil(stride)
}

/// Ceiling-mode max pooling with window and stride `s`; windows are clipped
/// at the border. Records the flat input index of each maximum.
pub fn maxpool_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, s: usize, y: &mut [T], arg: &mut [u32]) {
    let (oh, ow) = (pool_out(h, s), pool_out(w, s));
    for ch in 0..c {
        for orow in 0..oh {
            for ocol in 0..ow {
                let mut best = usize::MAX;
                for r in orow * s..((orow + 1) * s).min(h) {
                    for col in ocol * s..((ocol + 1) * s).min(w) {
                        let i = (ch * h + r) * w + col;
                        if best == usize::MAX || x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                let o = (ch * oh + orow) * ow + ocol;
                y[o] = x[best];
                arg[o] = best as u32;
            }
        }
    }
}

pub fn maxpool_backward<T: Scalar>(dy: &[T], arg: &[u32], dx: &mut [T]) {
    dx.fill(T::zero());
    for (&g, &i) in dy.iter().zip(arg) {
        dx[i as usize] = dx[i as usize] + g;
    }
}

/// Mean over each channel's spatial extent.
pub fn gap_forward<T: Scalar>(x: &[T], c: usize, hw: usize, y: &mut [T]) {
    let inv = T::one() / T::of(hw as f64);
    for (ch, out) in y.iter_mut().enumerate().take(c) {
        *out = x[ch * hw..(ch + 1) * hw].iter().copied().sum::<T>() * inv;
    }
}

pub fn gap_backward<T: Scalar>(dy: &[T], c: usize, hw: usize, dx: &mut [T]) {
    let inv = T::one() / T::of(hw as f64);
    for ch in 0..c {
        dx[ch * hw..(ch + 1) * hw].fill(dy[ch] * inv);
    }
}
