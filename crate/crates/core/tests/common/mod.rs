//! Reference implementations used as independent oracles. Nothing here calls
//! the crate's convolution or solver code.

#![allow(dead_code)]

use crnet_core::{FilterBank, Shape, Tensor4};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_bank(out: usize, inp: usize, k: usize, rng: &mut ChaCha8Rng) -> FilterBank {
    FilterBank::new(Tensor4::random_normal(Shape::new(out, inp, k, k), 1.0, rng)).unwrap()
}

/// Matrix of zero-padded cross-correlation on one `c×h×w` image, written
/// straight from the definition `y[o,i,j] = Σ f[o,c,p,q]·x[c,i+p-r,j+q-r]`.
/// Vectors are laid out channel-major, then row-major.
pub fn correlation_matrix(f: &FilterBank, h: usize, w: usize) -> DMatrix<f64> {
    let (m, c, k) = (f.out_channels(), f.in_channels(), f.kernel_size());
    let r = (k / 2) as isize;
    let mut a = DMatrix::zeros(m * h * w, c * h * w);
    for o in 0..m {
        for i in 0..h {
            for j in 0..w {
                let row = (o * h + i) * w + j;
                for ch in 0..c {
                    for p in 0..k {
                        for q in 0..k {
                            let (si, sj) =
                                (i as isize + p as isize - r, j as isize + q as isize - r);
                            if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                continue;
                            }
                            let col = (ch * h + si as usize) * w + sj as usize;
                            a[(row, col)] += f.at(o, ch, p, q);
                        }
                    }
                }
            }
        }
    }
    a
}

/// Matrix of any linear map on single images, built by probing it with
/// the standard basis.
pub fn probe_matrix(in_shape: Shape, op: impl Fn(&Tensor4) -> Tensor4) -> DMatrix<f64> {
    let n = in_shape.len();
    let mut cols = Vec::with_capacity(n);
    for e in 0..n {
        let mut x = Tensor4::zeros(in_shape);
        x.data_mut()[e] = 1.0;
        cols.push(DVector::from_vec(op(&x).into_vec()));
    }
    DMatrix::from_columns(&cols)
}

pub fn to_vector(x: &Tensor4) -> DVector<f64> {
    DVector::from_column_slice(x.data())
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Largest eigenvalue of `AᵀA` by a symmetric eigendecomposition.
pub fn gram_lambda_max(a: &DMatrix<f64>) -> f64 {
    let g = a.transpose() * a;
    g.symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::MIN, |m, &v| m.max(v))
}

pub fn threshold(v: f64, theta: f64, nonneg: bool) -> f64 {
    if nonneg {
        (v - theta).max(0.0)
    } else {
        v.signum() * (v.abs() - theta).max(0.0)
    }
}

/// Explicit-matrix ISTA on `½‖y − Dz‖² + λ‖z‖₁` with dictionary `D`.
pub struct DenseIsta {
    pub d: DMatrix<f64>,
    pub y: DVector<f64>,
    pub lambda: f64,
    pub nonneg: bool,
}

impl DenseIsta {
    /// `z₁ = h((1/L)Dᵀy)`.
    pub fn start(&self, lipschitz: f64) -> DVector<f64> {
        let v = self.d.transpose() * &self.y / lipschitz;
        v.map(|x| threshold(x, self.lambda / lipschitz, self.nonneg))
    }

    pub fn step(&self, z: &DVector<f64>, lipschitz: f64) -> DVector<f64> {
        let grad = self.d.transpose() * (&self.y - &self.d * z);
        let v = z + grad / lipschitz;
        v.map(|x| threshold(x, self.lambda / lipschitz, self.nonneg))
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (&self.y - &self.d * z).norm_squared()
            + self.lambda * z.iter().map(|v| v.abs()).sum::<f64>()
    }
}

/// Piecewise-constant shapes on a smooth background with a little texture:
/// sharp edges that bicubic interpolation blurs.
pub fn synthetic_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor4 {
    let (gx, gy, base) = (
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        rng.random_range(0.3..0.7),
    );
    let mut img = Tensor4::from_fn(Shape::new(1, 1, h, w), |_, _, i, j| {
        base + gx * (j as f64 / w as f64 - 0.5) + gy * (i as f64 / h as f64 - 0.5)
    });
    for _ in 0..6 {
        let level = rng.random_range(0.0..1.0);
        let (ci, cj) = (
            rng.random_range(0.0..h as f64),
            rng.random_range(0.0..w as f64),
        );
        let size = rng.random_range(3.0..(h.min(w) as f64 / 2.5));
        let disc = rng.random_bool(0.5);
        for i in 0..h {
            for j in 0..w {
                let (di, dj) = (i as f64 - ci, j as f64 - cj);
                let inside = if disc {
                    di * di + dj * dj < size * size
                } else {
                    di.abs() < size && dj.abs() < size * 0.6
                };
                if inside {
                    img.set(0, 0, i, j, level);
                }
            }
        }
    }
    let (fi, fj, amp) = (
        rng.random_range(0.3..1.2),
        rng.random_range(0.3..1.2),
        rng.random_range(0.0..0.08),
    );
    img.zip_map(
        &Tensor4::from_fn(Shape::new(1, 1, h, w), |_, _, i, j| {
            amp * (fi * i as f64).sin() * (fj * j as f64).cos()
        }),
        |a, b| (a + b).clamp(0.0, 1.0),
    )
    .unwrap()
    .quantize_u8()
}
