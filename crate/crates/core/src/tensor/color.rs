//! ITU-R BT.601 studio-swing luminance, values in `[0, 1]`.

use super::{Shape, Tensor4};
use crate::error::{shape_err, Result};

const OFFSET: f64 = 16.0 / 255.0;
const KR: f64 = 65.481 / 255.0;
const KG: f64 = 128.553 / 255.0;
const KB: f64 = 24.966 / 255.0;

/// `Y = 16/255 + (65.481 R + 128.553 G + 24.966 B) / 255`, one channel out.
pub fn rgb_to_ycbcr_y(x: &Tensor4) -> Result<Tensor4> {
    let s = x.shape();
    if s.c != 3 {
        return Err(shape_err!("expected 3 colour channels, got {}", s.c));
    }
    Ok(Tensor4::from_fn(
        Shape::new(s.b, 1, s.h, s.w),
        |n, _, i, j| OFFSET + KR * x.at(n, 0, i, j) + KG * x.at(n, 1, i, j) + KB * x.at(n, 2, i, j),
    ))
}

/// The equal per-channel RGB offset that moves luminance by `dy` while
/// leaving Cb and Cr untouched (their coefficient rows sum to zero).
pub fn ycbcr_y_to_rgb_delta(dy: f64) -> f64 {
    dy * 255.0 / 219.0
}

/// Add the luminance change `dy` (`b×1×h×w`) to an RGB image.
pub fn y_offset_to_rgb(rgb: &Tensor4, dy: &Tensor4) -> Result<Tensor4> {
    let s = rgb.shape();
    let ds = dy.shape();
    if s.c != 3 || ds.c != 1 || (s.b, s.h, s.w) != (ds.b, ds.h, ds.w) {
        return Err(shape_err!("cannot apply a {ds} luminance offset to {s}"));
    }
    Ok(Tensor4::from_fn(s, |n, c, i, j| {
        rgb.at(n, c, i, j) + ycbcr_y_to_rgb_delta(dy.at(n, 0, i, j))
    }))
}
