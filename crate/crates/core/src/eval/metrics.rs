//! PSNR and SSIM on the luminance plane.

use crate::error::{shape_err, Result};
use crate::tensor::{rgb_to_ycbcr_y, Tensor4};

/// SSIM window side.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Luminance of a 3-channel image; 1-channel images are taken as already
/// being luminance.
pub fn luminance(x: &Tensor4) -> Result<Tensor4> {
    match x.shape().c {
        1 => Ok(x.clone()),
        3 => rgb_to_ycbcr_y(x),
        c => Err(shape_err!("cannot take luminance of a {c}-channel image")),
    }
}

fn prepare(a: &Tensor4, b: &Tensor4, shave: usize, quantize: bool) -> Result<(Tensor4, Tensor4)> {
    a.expect_same_shape(b)?;
    let q = |t: &Tensor4| if quantize { t.quantize_u8() } else { t.clone() };
    let ya = luminance(&q(a))?.shave(shave)?;
    let yb = luminance(&q(b))?.shave(shave)?;
    Ok((ya, yb))
}

/// `10·log10(1/MSE)` for values in `[0, 1]`; `+∞` for identical inputs.
pub fn psnr(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    a.expect_same_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

/// PSNR of the luminance planes after removing `shave` pixels per border.
pub fn psnr_y(sr: &Tensor4, hr: &Tensor4, shave: usize) -> Result<f64> {
    psnr_y_with(sr, hr, shave, false)
}

/// As [`psnr_y`]; with `quantize`, both images are first rounded to 8-bit
/// levels as if written to and read back from a file.
pub fn psnr_y_with(sr: &Tensor4, hr: &Tensor4, shave: usize, quantize: bool) -> Result<f64> {
    let (a, b) = prepare(sr, hr, shave, quantize)?;
    psnr(&a, &b)
}

/// Normalised `SSIM_WINDOW`-tap Gaussian.
fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = [0.0; SSIM_WINDOW];
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - r;
        *t = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Separable Gaussian filter over valid positions of one `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * x[i * w + j + k])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = taps
                .iter()
                .enumerate()
                .map(|(k, t)| t * rows[(i + k) * ow + j])
                .sum();
        }
    }
    out
}

/// Mean SSIM over valid window positions of two single-plane images.
pub fn ssim(a: &Tensor4, b: &Tensor4) -> Result<f64> {
    a.expect_same_shape(b)?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(shape_err!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {s}"
        ));
    }
    let taps = gaussian_taps();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for n in 0..s.b {
        for c in 0..s.c {
            let (x, y) = (a.plane(n, c), b.plane(n, c));
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
            let mx = filter_valid(x, s.h, s.w, &taps);
            let my = filter_valid(y, s.h, s.w, &taps);
            let sxx = filter_valid(&xx, s.h, s.w, &taps);
            let syy = filter_valid(&yy, s.h, s.w, &taps);
            let sxy = filter_valid(&xy, s.h, s.w, &taps);
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let vx = sxx[i] - ux * ux;
                let vy = syy[i] - uy * uy;
                let cov = sxy[i] - ux * uy;
                total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                    / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

pub fn ssim_y(sr: &Tensor4, hr: &Tensor4, shave: usize) -> Result<f64> {
    ssim_y_with(sr, hr, shave, false)
}

pub fn ssim_y_with(sr: &Tensor4, hr: &Tensor4, shave: usize, quantize: bool) -> Result<f64> {
    let (a, b) = prepare(sr, hr, shave, quantize)?;
    ssim(&a, &b)
}
