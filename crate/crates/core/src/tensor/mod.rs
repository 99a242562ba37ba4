//! Dense 4-D tensors and the image primitives built on them.

mod color;
mod conv;
mod resize;
mod shuffle;

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{config_err, shape_err, Result};

pub use color::{rgb_to_ycbcr_y, y_offset_to_rgb, ycbcr_y_to_rgb_delta};
pub use conv::{
    conv2d_adjoint, conv2d_same, conv2d_weight_grad, flip_kernels, flip_kernels_with_channel_swap,
};
pub(crate) use conv::{correlate, correlate_adjoint};
pub use resize::{
    bicubic_resize, bicubic_resize_with, bicubic_weights, BorderMode, ResampleWeights,
};
pub use shuffle::{pixel_shuffle, space_to_depth};

/// `(batch, channels, height, width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { b, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.b, self.c, self.h, self.w]
    }

    fn validate(&self) -> Result<()> {
        if self.b == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(shape_err!("all tensor dimensions must be >= 1, got {self}"));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.b, self.c, self.h, self.w)
    }
}

/// Row-major `b×c×h×w` array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(shape_err!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.len()
            ));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        assert!(
            shape.validate().is_ok(),
            "tensor dimensions must be >= 1, got {shape}"
        );
        Tensor4 {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// A `1×1×1×1` tensor.
    pub fn scalar(value: f64) -> Self {
        Self::full(Shape::new(1, 1, 1, 1), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = 0;
        for n in 0..shape.b {
            for c in 0..shape.c {
                for i in 0..shape.h {
                    for j in 0..shape.w {
                        t.data[idx] = f(n, c, i, j);
                        idx += 1;
                    }
                }
            }
        }
        t
    }

    pub fn random_normal<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and >= 0");
        let data = (0..shape.len()).map(|_| normal.sample(rng)).collect();
        Self::from_vec(shape, data).expect("shape was validated")
    }

    pub fn random_uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect();
        Self::from_vec(shape, data).expect("shape was validated")
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        let s = self.shape;
        debug_assert!(n < s.b && c < s.c && i < s.h && j < s.w);
        ((n * s.c + c) * s.h + i) * s.w + j
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(n, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: f64) {
        let idx = self.index(n, c, i, j);
        self.data[idx] = v;
    }

    /// The `h×w` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor4, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor4) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor4) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor4) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Tensor4) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor4) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn expect_same_shape(&self, other: &Tensor4) -> Result<()> {
        if self.shape != other.shape {
            return Err(shape_err!(
                "shape mismatch: {} vs {}",
                self.shape,
                other.shape
            ));
        }
        Ok(())
    }

    /// Sample `n` as a `1×c×h×w` tensor.
    pub fn sample(&self, n: usize) -> Tensor4 {
        let per = self.shape.c * self.shape.plane();
        Tensor4 {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Concatenate along the batch axis.
    pub fn stack(items: &[&Tensor4]) -> Result<Tensor4> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("cannot stack an empty list"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(s.len() * items.len());
        let mut b = 0;
        for t in items {
            let ts = t.shape;
            if (ts.c, ts.h, ts.w) != (s.c, s.h, s.w) {
                return Err(shape_err!("cannot stack {ts} with {s}"));
            }
            b += ts.b;
            data.extend_from_slice(&t.data);
        }
        Tensor4::from_vec(Shape::new(b, s.c, s.h, s.w), data)
    }

    /// Channel `c` of every sample as a `b×1×h×w` tensor.
    pub fn channel(&self, c: usize) -> Tensor4 {
        let s = self.shape;
        Tensor4::from_fn(Shape::new(s.b, 1, s.h, s.w), |n, _, i, j| {
            self.at(n, c, i, j)
        })
    }

    /// Spatial window `[top, top+h) × [left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor4> {
        let s = self.shape;
        if h == 0 || w == 0 || top + h > s.h || left + w > s.w {
            return Err(shape_err!(
                "crop {h}x{w} at ({top},{left}) is outside {}x{}",
                s.h,
                s.w
            ));
        }
        Ok(Tensor4::from_fn(
            Shape::new(s.b, s.c, h, w),
            |n, c, i, j| self.at(n, c, top + i, left + j),
        ))
    }

    /// Crop height and width down to multiples of `m`.
    pub fn modcrop(&self, m: usize) -> Result<Tensor4> {
        let s = self.shape;
        let (h, w) = (s.h - s.h % m, s.w - s.w % m);
        self.crop(0, 0, h, w)
    }

    /// Drop `border` pixels from every side.
    pub fn shave(&self, border: usize) -> Result<Tensor4> {
        let s = self.shape;
        if 2 * border >= s.h || 2 * border >= s.w {
            return Err(shape_err!(
                "cannot shave {border} pixels from a {}x{} image",
                s.h,
                s.w
            ));
        }
        self.crop(border, border, s.h - 2 * border, s.w - 2 * border)
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor4 {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Round to the nearest of the 256 levels `v/255` after clamping to `[0, 1]`.
    pub fn quantize_u8(&self) -> Tensor4 {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }

    pub fn flip_horizontal(&self) -> Tensor4 {
        let s = self.shape;
        Tensor4::from_fn(s, |n, c, i, j| self.at(n, c, i, s.w - 1 - j))
    }

    pub fn flip_vertical(&self) -> Tensor4 {
        let s = self.shape;
        Tensor4::from_fn(s, |n, c, i, j| self.at(n, c, s.h - 1 - i, j))
    }

    /// Counter-clockwise rotation by 90°.
    pub fn rot90(&self) -> Tensor4 {
        let s = self.shape;
        Tensor4::from_fn(Shape::new(s.b, s.c, s.w, s.h), |n, c, i, j| {
            self.at(n, c, j, s.w - 1 - i)
        })
    }

    pub fn rot90_k(&self, k: u8) -> Tensor4 {
        let mut out = self.clone();
        for _ in 0..k % 4 {
            out = out.rot90();
        }
        out
    }

    pub fn transform(&self, t: Dihedral) -> Tensor4 {
        t.apply(self)
    }
}

/// One of the eight symmetries of the square: an optional horizontal flip
/// followed by `rot` counter-clockwise quarter turns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub rot: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        flip: false,
        rot: 0,
    };

    pub fn all() -> [Dihedral; 8] {
        let mut out = [Self::IDENTITY; 8];
        for (i, t) in out.iter_mut().enumerate() {
            *t = Dihedral {
                flip: i >= 4,
                rot: (i % 4) as u8,
            };
        }
        out
    }

    pub fn apply(&self, x: &Tensor4) -> Tensor4 {
        let flipped = if self.flip {
            x.flip_horizontal()
        } else {
            x.clone()
        };
        flipped.rot90_k(self.rot)
    }

    pub fn invert(&self, y: &Tensor4) -> Tensor4 {
        let unrotated = y.rot90_k((4 - self.rot % 4) % 4);
        if self.flip {
            unrotated.flip_horizontal()
        } else {
            unrotated
        }
    }
}

/// Convolution weights laid out `out_channels × in_channels × k × k`, `k` odd.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    weights: Tensor4,
}

impl FilterBank {
    pub fn new(weights: Tensor4) -> Result<Self> {
        let s = weights.shape();
        if s.h != s.w {
            return Err(config_err!("kernel must be square, got {}x{}", s.h, s.w));
        }
        if s.h.is_multiple_of(2) {
            return Err(config_err!("kernel size must be odd, got {}", s.h));
        }
        Ok(FilterBank { weights })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, k: usize) -> Result<Self> {
        Self::new(Tensor4::zeros(Shape::new(out_channels, in_channels, k, k)))
    }

    pub fn from_vec(
        out_channels: usize,
        in_channels: usize,
        k: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        Self::new(Tensor4::from_vec(
            Shape::new(out_channels, in_channels, k, k),
            data,
        )?)
    }

    /// Per-channel identity: a 1 at the spatial centre of each channel's own
    /// kernel, so that `conv2d_same(z, delta) == z`.
    pub fn delta(channels: usize, k: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(config_err!("kernel size must be odd, got {k}"));
        }
        let r = k / 2;
        Self::new(Tensor4::from_fn(
            Shape::new(channels, channels, k, k),
            |o, c, p, q| if o == c && p == r && q == r { 1.0 } else { 0.0 },
        ))
    }

    pub fn weights(&self) -> &Tensor4 {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor4 {
        &mut self.weights
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.weights
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().b
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().c
    }

    pub fn kernel_size(&self) -> usize {
        self.weights.shape().h
    }

    pub fn radius(&self) -> usize {
        self.kernel_size() / 2
    }

    #[inline]
    pub fn at(&self, o: usize, c: usize, p: usize, q: usize) -> f64 {
        self.weights.at(o, c, p, q)
    }

    /// The `k×k` kernel connecting input channel `c` to output channel `o`.
    pub fn kernel(&self, o: usize, c: usize) -> &[f64] {
        self.weights.plane(o, c)
    }
}

impl TryFrom<Tensor4> for FilterBank {
    type Error = crate::Error;

    fn try_from(t: Tensor4) -> Result<Self> {
        FilterBank::new(t)
    }
}
