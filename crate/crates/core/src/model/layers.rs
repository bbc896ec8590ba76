//! Single-example kernels. Tensors are flat `[channel][time]` slices.

use crate::scalar::Scalar;

/// Output positions `t` whose tap `kk` reads a valid input index.
#[inline]
fn tap_range(kk: usize, pad: usize, stride: usize, lin: usize, lout: usize) -> (usize, usize) {
    let t0 = if kk >= pad { 0 } else { (pad - kk).div_ceil(stride) };
    let last = lin as isize - 1 + pad as isize - kk as isize;
    if last < 0 {
        return (0, 0);
    }
    let t1 = (last as usize / stride + 1).min(lout);
    (t0, t1.max(t0))
}

/// Dot product with eight independent partial sums, so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward<T: Scalar>(
    x: &[T],
    cin: usize,
    lin: usize,
    w: &[T],
    bias: &[T],
    k: usize,
    stride: usize,
    y: &mut [T],
    lout: usize,
) {
    let pad = k / 2;
    for (o, yo) in y.chunks_exact_mut(lout).enumerate() {
        yo.fill(bias[o]);
        for i in 0..cin {
            let xi = &x[i * lin..(i + 1) * lin];
            for kk in 0..k {
                let wv = w[(o * cin + i) * k + kk];
                let (t0, t1) = tap_range(kk, pad, stride, lin, lout);
                if t1 == t0 {
                    continue;
                }
                if stride == 1 {
                    let off = t0 + kk - pad;
                    for (yv, &xv) in yo[t0..t1].iter_mut().zip(&xi[off..off + (t1 - t0)]) {
                        *yv += wv * xv;
                    }
                } else {
                    for t in t0..t1 {
                        yo[t] += wv * xi[t * stride + kk - pad];
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients and, when `dx` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    x: &[T],
    cin: usize,
    lin: usize,
    w: &[T],
    k: usize,
    stride: usize,
    dy: &[T],
    lout: usize,
    dw: &mut [T],
    db: &mut [T],
    mut dx: Option<&mut [T]>,
) {
    let pad = k / 2;
    for (o, dyo) in dy.chunks_exact(lout).enumerate() {
        db[o] += dyo.iter().copied().sum::<T>();
        for i in 0..cin {
            let xi = &x[i * lin..(i + 1) * lin];
            for kk in 0..k {
                let widx = (o * cin + i) * k + kk;
                let (t0, t1) = tap_range(kk, pad, stride, lin, lout);
                if t1 == t0 {
                    continue;
                }
                let wv = w[widx];
                if stride == 1 {
                    let off = t0 + kk - pad;
                    let xs = &xi[off..off + (t1 - t0)];
                    dw[widx] += dot(&dyo[t0..t1], xs);
                    if let Some(dx) = dx.as_deref_mut() {
                        let dxi = &mut dx[i * lin + off..i * lin + off + (t1 - t0)];
                        for (d, &g) in dxi.iter_mut().zip(&dyo[t0..t1]) {
                            *d += wv * g;
                        }
                    }
                } else {
                    let mut acc = T::zero();
                    for t in t0..t1 {
                        let xi_idx = t * stride + kk - pad;
                        acc += dyo[t] * xi[xi_idx];
                        if let Some(dx) = dx.as_deref_mut() {
                            dx[i * lin + xi_idx] += wv * dyo[t];
                        }
                    }
                    dw[widx] += acc;
                }
            }
        }
    }
}

/// Non-overlapping max pooling; records the winning input index per output.
pub(crate) fn maxpool_forward<T: Scalar>(x: &[T], channels: usize, lin: usize, width: usize, y: &mut [T], idx: &mut [u32]) {
    let lout = lin / width;
    for c in 0..channels {
        let xc = &x[c * lin..(c + 1) * lin];
        for t in 0..lout {
            let mut best = t * width;
            for j in t * width + 1..(t + 1) * width {
                if xc[j] > xc[best] {
                    best = j;
                }
            }
            y[c * lout + t] = xc[best];
            idx[c * lout + t] = (c * lin + best) as u32;
        }
    }
}

/// 1x1 convolution: `y[j, t] = b[j] + sum_c w[j, c] x[c, t]`.
pub(crate) fn pointwise_forward<T: Scalar>(x: &[T], cin: usize, len: usize, w: &[T], b: &[T], y: &mut [T]) {
    for (j, yj) in y.chunks_exact_mut(len).enumerate() {
        yj.fill(b[j]);
        for c in 0..cin {
            let wv = w[j * cin + c];
            for (yv, &xv) in yj.iter_mut().zip(&x[c * len..(c + 1) * len]) {
                *yv += wv * xv;
            }
        }
    }
}
