//! Zero-padded "same" convolution.
//!
//! The primitive is cross-correlation: for a bank `f` of shape
//! `out×in×k×k` and `r = (k-1)/2`,
//!
//! ```text
//! y[n,o,i,j] = Σ_c Σ_{p,q} f[o,c,p,q] · x[n,c,i+p-r,j+q-r]
//! ```
//!
//! with `x` read as zero outside the image. A mathematical convolution with
//! `f` is a cross-correlation with `flip(f)`; every filter in this crate is
//! either learned or explicitly flipped, so only the adjoint relation
//! `<conv2d_same(z,f), y> = <z, conv2d_adjoint(y,f)>` matters.

use rayon::prelude::*;

use super::{FilterBank, Shape, Tensor4};
use crate::error::{shape_err, Result};

/// Accumulate `weight * x` shifted by `(di, dj)` into `out`, both `h×w`.
#[inline]
fn accumulate_shifted(
    out: &mut [f64],
    x: &[f64],
    h: usize,
    w: usize,
    di: isize,
    dj: isize,
    weight: f64,
) {
    let i0 = (-di).max(0) as usize;
    let i1 = (h as isize - di).min(h as isize).max(0) as usize;
    let j0 = (-dj).max(0) as usize;
    let j1 = (w as isize - dj).min(w as isize).max(0) as usize;
    if j0 >= j1 {
        return;
    }
    for i in i0..i1 {
        let src = (i as isize + di) as usize * w;
        let orow = &mut out[i * w + j0..i * w + j1];
        let xrow = &x[(src as isize + j0 as isize + dj) as usize
            ..(src as isize + j1 as isize + dj) as usize];
        for (o, &v) in orow.iter_mut().zip(xrow) {
            *o += weight * v;
        }
    }
}

/// Σ over the valid region of `a[i,j] * b[i+di, j+dj]`.
#[inline]
fn shifted_dot(a: &[f64], b: &[f64], h: usize, w: usize, di: isize, dj: isize) -> f64 {
    let i0 = (-di).max(0) as usize;
    let i1 = (h as isize - di).min(h as isize).max(0) as usize;
    let j0 = (-dj).max(0) as usize;
    let j1 = (w as isize - dj).min(w as isize).max(0) as usize;
    if j0 >= j1 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in i0..i1 {
        let src = ((i as isize + di) as usize * w) as isize;
        let arow = &a[i * w + j0..i * w + j1];
        let brow = &b[(src + j0 as isize + dj) as usize..(src + j1 as isize + dj) as usize];
        acc += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
    }
    acc
}

/// Zero-padded cross-correlation, output `b × f.out × h × w`.
pub fn conv2d_same(x: &Tensor4, f: &FilterBank) -> Result<Tensor4> {
    correlate(x, f.weights())
}

fn check_kernel(w: &Tensor4) -> Result<usize> {
    let ws = w.shape();
    if ws.h != ws.w || ws.h.is_multiple_of(2) {
        return Err(shape_err!(
            "kernels must be square with odd size, got {}x{}",
            ws.h,
            ws.w
        ));
    }
    Ok(ws.h)
}

/// [`conv2d_same`] on a raw `out×in×k×k` weight tensor.
pub(crate) fn correlate(x: &Tensor4, weights: &Tensor4) -> Result<Tensor4> {
    let k = check_kernel(weights)?;
    let xs = x.shape();
    let ws = weights.shape();
    if xs.c != ws.c {
        return Err(shape_err!(
            "conv2d: input has {} channels but the filter bank expects {}",
            xs.c,
            ws.c
        ));
    }
    let (h, w) = (xs.h, xs.w);
    let plane = h * w;
    let r = (k / 2) as isize;
    let out_c = ws.b;
    let mut out = Tensor4::zeros(Shape::new(xs.b, out_c, h, w));
    let xd = x.data();

    out.data_mut()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(idx, oplane)| {
            let (n, o) = (idx / out_c, idx % out_c);
            for c in 0..xs.c {
                let xplane = &xd[(n * xs.c + c) * plane..(n * xs.c + c + 1) * plane];
                let kernel = weights.plane(o, c);
                for p in 0..k {
                    for q in 0..k {
                        let wv = kernel[p * k + q];
                        if wv != 0.0 {
                            accumulate_shifted(
                                oplane,
                                xplane,
                                h,
                                w,
                                p as isize - r,
                                q as isize - r,
                                wv,
                            );
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// [`conv2d_adjoint`] on a raw weight tensor.
pub(crate) fn correlate_adjoint(x: &Tensor4, weights: &Tensor4) -> Result<Tensor4> {
    check_kernel(weights)?;
    if x.shape().c != weights.shape().b {
        return Err(shape_err!(
            "conv2d_adjoint: input has {} channels but the filter bank produces {}",
            x.shape().c,
            weights.shape().b
        ));
    }
    correlate(x, &swap_flip(weights))
}

fn swap_flip(w: &Tensor4) -> Tensor4 {
    let s = w.shape();
    let k = s.h;
    Tensor4::from_fn(Shape::new(s.c, s.b, k, k), |o, c, p, q| {
        w.at(c, o, k - 1 - p, k - 1 - q)
    })
}

/// Spatially reverse every kernel; channel layout unchanged.
pub fn flip_kernels(f: &FilterBank) -> FilterBank {
    let s = f.weights().shape();
    let k = s.h;
    let t = Tensor4::from_fn(s, |o, c, p, q| f.at(o, c, k - 1 - p, k - 1 - q));
    FilterBank::new(t).expect("flipping preserves a valid bank")
}

/// Spatially reverse every kernel and swap the in/out channel roles: the
/// bank whose correlation is the transpose of correlation with `f`.
pub fn flip_kernels_with_channel_swap(f: &FilterBank) -> FilterBank {
    FilterBank::new(swap_flip(f.weights())).expect("flipping preserves a valid bank")
}

/// The transpose of [`conv2d_same`] with respect to its input:
/// `x` has `f.out` channels, the output has `f.in` channels.
pub fn conv2d_adjoint(x: &Tensor4, f: &FilterBank) -> Result<Tensor4> {
    correlate_adjoint(x, f.weights())
}

/// Gradient of `<conv2d_same(x, f), grad_out>` with respect to `f`.
pub fn conv2d_weight_grad(x: &Tensor4, grad_out: &Tensor4, k: usize) -> Result<Tensor4> {
    let xs = x.shape();
    let gs = grad_out.shape();
    if xs.b != gs.b || xs.h != gs.h || xs.w != gs.w {
        return Err(shape_err!(
            "conv2d weight grad: input {xs} vs upstream {gs}"
        ));
    }
    if k.is_multiple_of(2) {
        return Err(shape_err!("kernel size must be odd, got {k}"));
    }
    let (h, w) = (xs.h, xs.w);
    let plane = h * w;
    let r = (k / 2) as isize;
    let (out_c, in_c) = (gs.c, xs.c);
    let mut dw = Tensor4::zeros(Shape::new(out_c, in_c, k, k));
    let (xd, gd) = (x.data(), grad_out.data());

    dw.data_mut()
        .par_chunks_mut(k * k)
        .enumerate()
        .for_each(|(idx, kernel)| {
            let (o, c) = (idx / in_c, idx % in_c);
            for n in 0..xs.b {
                let gplane = &gd[(n * out_c + o) * plane..(n * out_c + o + 1) * plane];
                let xplane = &xd[(n * in_c + c) * plane..(n * in_c + c + 1) * plane];
                for p in 0..k {
                    for q in 0..k {
                        kernel[p * k + q] +=
                            shifted_dot(gplane, xplane, h, w, p as isize - r, q as isize - r);
                    }
                }
            }
        });
    Ok(dw)
}
