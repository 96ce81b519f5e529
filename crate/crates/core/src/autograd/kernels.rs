//! Forward and adjoint kernels for the fixed op set.
//!
//! Convolution weights use the `(k, k, cin, cout)` layout; biases are stored
//! as `(cout, 1, 1, 1)`. Every kernel parallelizes over output planes and keeps
//! each reduction inside a single work item.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Scalar, Shape, Tensor};

pub const SIGMOID_INPUT_CLAMP: f64 = 30.0;
pub const SIGMOID_OUTPUT_EPS: f64 = 1e-7;

#[inline]
fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Valid `[lo, hi)` range of output coordinates for a tap at offset `d`.
#[inline]
fn tap_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

fn check_conv_shapes<T: Scalar>(
    layer: &str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize)> {
    let ws = weight.shape();
    let (k, cin, cout) = (ws.n, ws.h, ws.w);
    if ws.c != k || !(k == 1 || k == 3) {
        return Err(Error::shape(
            layer,
            "weight (k, k, cin, cout) with k in {1, 3}",
            ws,
        ));
    }
    if input.shape().c != cin {
        return Err(Error::shape(
            layer,
            format!("input with {cin} channels"),
            input.shape(),
        ));
    }
    if bias.shape() != Shape::new(cout, 1, 1, 1) {
        return Err(Error::shape(layer, Shape::new(cout, 1, 1, 1), bias.shape()));
    }
    Ok((k, cin, cout))
}

/// Stride-1 cross-correlation with zero padding `k / 2`.
pub fn conv2d_forward<T: Scalar>(
    layer: &str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (k, cin, cout) = check_conv_shapes(layer, input, weight, bias)?;
    let Shape { n, h, w, .. } = input.shape();
    let pad = (k / 2) as isize;
    let wd = weight.data();
    let bd = bias.data();
    let mut out = Tensor::zeros(Shape::new(n, cout, h, w));
    par::for_each_chunk_mut(out.data_mut(), h * w, |p, plane| {
        let (ni, co) = (p / cout, p % cout);
        plane.iter_mut().for_each(|v| *v = bd[co]);
        for ci in 0..cin {
            let src = input.plane(ni, ci);
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = tap_range(w, dx);
                    let wv = wd[((ky * k + kx) * cin + ci) * cout + co];
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        axpy(
                            &mut plane[y * w + x0..y * w + x1],
                            wv,
                            &src[iy * w + ix0..iy * w + ix0 + (x1 - x0)],
                        );
                    }
                }
            }
        }
    });
    Ok(out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> ConvGrads<T> {
    let ws = weight.shape();
    let (k, cin, cout) = (ws.n, ws.h, ws.w);
    let Shape { n, h, w, .. } = input.shape();
    let pad = (k / 2) as isize;
    let wd = weight.data();

    let mut gin = Tensor::zeros(input.shape());
    par::for_each_chunk_mut(gin.data_mut(), h * w, |p, plane| {
        let (ni, ci) = (p / cin, p % cin);
        for co in 0..cout {
            let g = grad_out.plane(ni, co);
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = tap_range(h, dy);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = tap_range(w, dx);
                    let wv = wd[((ky * k + kx) * cin + ci) * cout + co];
                    for y in y0..y1 {
                        let iy = (y as isize + dy) as usize;
                        let ix0 = (x0 as isize + dx) as usize;
                        axpy(
                            &mut plane[iy * w + ix0..iy * w + ix0 + (x1 - x0)],
                            wv,
                            &g[y * w + x0..y * w + x1],
                        );
                    }
                }
            }
        }
    });

    // Per output channel: k*k*cin weight gradients followed by the bias gradient.
    let taps = k * k * cin;
    let per_co: Vec<Vec<T>> = par::map_range(cout, |co| {
        let mut acc = vec![T::zero(); taps + 1];
        for ni in 0..n {
            let g = grad_out.plane(ni, co);
            acc[taps] += g.iter().copied().sum::<T>();
            for ci in 0..cin {
                let src = input.plane(ni, ci);
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = tap_range(h, dy);
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (x0, x1) = tap_range(w, dx);
                        let mut s = T::zero();
                        for y in y0..y1 {
                            let iy = (y as isize + dy) as usize;
                            let ix0 = (x0 as isize + dx) as usize;
                            s += dot(
                                &g[y * w + x0..y * w + x1],
                                &src[iy * w + ix0..iy * w + ix0 + (x1 - x0)],
                            );
                        }
                        acc[(ky * k + kx) * cin + ci] += s;
                    }
                }
            }
        }
        acc
    });
    let mut gw = Tensor::zeros(ws);
    let mut gb = Tensor::zeros(Shape::new(cout, 1, 1, 1));
    {
        let gwd = gw.data_mut();
        for (co, acc) in per_co.iter().enumerate() {
            for t in 0..taps {
                gwd[t * cout + co] = acc[t];
            }
        }
    }
    for (co, acc) in per_co.iter().enumerate() {
        gb.data_mut()[co] = acc[taps];
    }
    ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    }
}

/// 2×2, stride-2 transposed convolution without padding; doubles spatial size.
pub fn conv_transpose2d_forward<T: Scalar>(
    layer: &str,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let ws = weight.shape();
    let (cin, cout) = (ws.h, ws.w);
    if ws.n != 2 || ws.c != 2 {
        return Err(Error::shape(layer, "weight (2, 2, cin, cout)", ws));
    }
    if input.shape().c != cin {
        return Err(Error::shape(
            layer,
            format!("input with {cin} channels"),
            input.shape(),
        ));
    }
    if bias.shape() != Shape::new(cout, 1, 1, 1) {
        return Err(Error::shape(layer, Shape::new(cout, 1, 1, 1), bias.shape()));
    }
    let Shape { n, h, w, .. } = input.shape();
    let (oh, ow) = (2 * h, 2 * w);
    let wd = weight.data();
    let bd = bias.data();
    let mut out = Tensor::zeros(Shape::new(n, cout, oh, ow));
    par::for_each_chunk_mut(out.data_mut(), oh * ow, |p, plane| {
        let (ni, co) = (p / cout, p % cout);
        plane.iter_mut().for_each(|v| *v = bd[co]);
        for ci in 0..cin {
            let src = input.plane(ni, ci);
            for dy in 0..2 {
                for dx in 0..2 {
                    let wv = wd[((dy * 2 + dx) * cin + ci) * cout + co];
                    for y in 0..h {
                        let row = &mut plane[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                        for x in 0..w {
                            row[2 * x + dx] += wv * src[y * w + x];
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> ConvGrads<T> {
    let ws = weight.shape();
    let (cin, cout) = (ws.h, ws.w);
    let Shape { n, h, w, .. } = input.shape();
    let ow = 2 * w;
    let wd = weight.data();

    let mut gin = Tensor::zeros(input.shape());
    par::for_each_chunk_mut(gin.data_mut(), h * w, |p, plane| {
        let (ni, ci) = (p / cin, p % cin);
        for co in 0..cout {
            let g = grad_out.plane(ni, co);
            for dy in 0..2 {
                for dx in 0..2 {
                    let wv = wd[((dy * 2 + dx) * cin + ci) * cout + co];
                    for y in 0..h {
                        let row = &g[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                        for x in 0..w {
                            plane[y * w + x] += wv * row[2 * x + dx];
                        }
                    }
                }
            }
        }
    });

    let taps = 4 * cin;
    let per_co: Vec<Vec<T>> = par::map_range(cout, |co| {
        let mut acc = vec![T::zero(); taps + 1];
        for ni in 0..n {
            let g = grad_out.plane(ni, co);
            acc[taps] += g.iter().copied().sum::<T>();
            for ci in 0..cin {
                let src = input.plane(ni, ci);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let mut s = T::zero();
                        for y in 0..h {
                            let row = &g[(2 * y + dy) * ow..(2 * y + dy + 1) * ow];
                            for x in 0..w {
                                s += src[y * w + x] * row[2 * x + dx];
                            }
                        }
                        acc[(dy * 2 + dx) * cin + ci] += s;
                    }
                }
            }
        }
        acc
    });
    let mut gw = Tensor::zeros(ws);
    let mut gb = Tensor::zeros(Shape::new(cout, 1, 1, 1));
    for (co, acc) in per_co.iter().enumerate() {
        for (t, &v) in acc[..taps].iter().enumerate() {
            gw.data_mut()[t * cout + co] = v;
        }
        gb.data_mut()[co] = acc[taps];
    }
    ConvGrads {
        input: gin,
        weight: gw,
        bias: gb,
    }
}

/// 2×2 max pooling. Returns the pooled tensor and, per output element, the
/// flat index of the winning input element. Ties go to the first element in
/// row-major window order.
pub fn maxpool2x2_forward<T: Scalar>(
    layer: &str,
    input: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(layer, "even spatial dimensions", s));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let planes = s.n * s.c;
    let results: Vec<(Vec<T>, Vec<u32>)> = par::map_range(planes, |p| {
        let src = &input.data()[p * s.plane()..(p + 1) * s.plane()];
        let base = (p * s.plane()) as u32;
        let mut vals = Vec::with_capacity(oh * ow);
        let mut idx = Vec::with_capacity(oh * ow);
        for y in 0..oh {
            for x in 0..ow {
                let mut best = 2 * y * s.w + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = (2 * y + dy) * s.w + 2 * x + dx;
                    if src[j] > src[best] {
                        best = j;
                    }
                }
                vals.push(src[best]);
                idx.push(base + best as u32);
            }
        }
        (vals, idx)
    });
    let mut data = Vec::with_capacity(out_shape.len());
    let mut argmax = Vec::with_capacity(out_shape.len());
    for (v, i) in results {
        data.extend(v);
        argmax.extend(i);
    }
    Ok((Tensor::from_vec(out_shape, data)?, argmax))
}

pub fn maxpool2x2_backward<T: Scalar>(
    input_shape: Shape,
    argmax: &[u32],
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let mut gin = Tensor::zeros(input_shape);
    let gd = gin.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        gd[i as usize] += g;
    }
    gin
}

pub fn upsample_nearest2x_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let (oh, ow) = (2 * s.h, 2 * s.w);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    par::for_each_chunk_mut(out.data_mut(), oh * ow, |p, plane| {
        let src = &input.data()[p * s.plane()..(p + 1) * s.plane()];
        for (y, row) in plane.chunks_mut(ow).enumerate() {
            let srow = &src[(y / 2) * s.w..(y / 2 + 1) * s.w];
            for (x, v) in row.iter_mut().enumerate() {
                *v = srow[x / 2];
            }
        }
    });
    out
}

pub fn upsample_nearest2x_backward<T: Scalar>(
    input_shape: Shape,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let s = input_shape;
    let ow = 2 * s.w;
    let mut gin = Tensor::zeros(s);
    par::for_each_chunk_mut(gin.data_mut(), s.plane(), |p, plane| {
        let g = &grad_out.data()[p * 4 * s.plane()..(p + 1) * 4 * s.plane()];
        for y in 0..s.h {
            for x in 0..s.w {
                let a = (2 * y) * ow + 2 * x;
                let b = a + ow;
                plane[y * s.w + x] = (g[a] + g[a + 1]) + (g[b] + g[b + 1]);
            }
        }
    });
    gin
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("shape preserved")
}

/// Clamped logistic: input limited to ±30, output to `[1e-7, 1 - 1e-7]`.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let lim = T::of(SIGMOID_INPUT_CLAMP);
    let eps = T::of(SIGMOID_OUTPUT_EPS);
    let z = x.max(-lim).min(lim);
    let s = T::one() / (T::one() + (-z).exp());
    s.max(eps).min(T::one() - eps)
}

/// Whether the clamped sigmoid is locally flat at `x`.
#[inline]
pub fn sigmoid_saturated<T: Scalar>(x: T) -> bool {
    let lim = T::of(SIGMOID_INPUT_CLAMP);
    let eps = T::of(SIGMOID_OUTPUT_EPS);
    if x < -lim || x > lim {
        return true;
    }
    let s = T::one() / (T::one() + (-x).exp());
    s < eps || s > T::one() - eps
}

pub fn sigmoid_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

pub fn sigmoid_backward<T: Scalar>(
    input: &Tensor<T>,
    output: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(output.data())
        .zip(grad_out.data())
        .map(|((&x, &s), &g)| {
            if sigmoid_saturated(x) {
                T::zero()
            } else {
                g * s * (T::one() - s)
            }
        })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("shape preserved")
}

/// Concatenates along channels: all of `a`'s channels, then `b`'s.
pub fn concat_channels_forward<T: Scalar>(
    layer: &str,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return Err(Error::shape(layer, sa, sb));
    }
    let shape = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut data = Vec::with_capacity(shape.len());
    for ni in 0..sa.n {
        data.extend_from_slice(a.item(ni));
        data.extend_from_slice(b.item(ni));
    }
    Tensor::from_vec(shape, data)
}

/// Splits a concatenated gradient at channel `ca`.
pub fn concat_channels_backward<T: Scalar>(
    ca: usize,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let s = grad_out.shape();
    let cb = s.c - ca;
    let (la, lb) = (ca * s.plane(), cb * s.plane());
    let mut ga = Vec::with_capacity(s.n * la);
    let mut gb = Vec::with_capacity(s.n * lb);
    for ni in 0..s.n {
        let item = grad_out.item(ni);
        ga.extend_from_slice(&item[..la]);
        gb.extend_from_slice(&item[la..]);
    }
    (
        Tensor::from_vec(Shape::new(s.n, ca, s.h, s.w), ga).expect("split shape"),
        Tensor::from_vec(Shape::new(s.n, cb, s.h, s.w), gb).expect("split shape"),
    )
}

pub fn add_forward<T: Scalar>(layer: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(layer, a.shape(), b.shape()));
    }
    let mut out = a.clone();
    out.accumulate(b);
    Ok(out)
}
