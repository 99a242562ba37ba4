//! Explicit convolution matrices, for checking the convolutional forms
//! against plain linear algebra on small instances.

use crate::error::{config_err, shape_err, Result};
use crate::tensor::{FilterBank, Shape, Tensor4};

/// Largest matrix (in entries) [`build_convolution_matrix`] will allocate.
pub const MAX_DENSE_ENTRIES: usize = 16 << 20;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `selfᵀ · x` without materialising the transpose.
    pub fn matvec_transposed(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * xr;
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (o, &b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// The matrix `M` of shape `(out·h·w) × (in·h·w)` with
/// `M · vec(x) == vec(conv2d_same(x, f))` for a single `in×h×w` image,
/// vectorised channel-major then row-major. Built directly from the kernel
/// taps, not by probing the convolution.
///
/// For a dictionary stored `m×c×s×s`, this is the analysis operator `Fᵀ`;
/// its transpose is the synthesis operator `F = [F_1 … F_m]`.
pub fn build_convolution_matrix(f: &FilterBank, h: usize, w: usize) -> Result<DenseMatrix> {
    let (out_c, in_c, k) = (f.out_channels(), f.in_channels(), f.kernel_size());
    let rows = out_c * h * w;
    let cols = in_c * h * w;
    if rows.saturating_mul(cols) > MAX_DENSE_ENTRIES {
        return Err(config_err!(
            "dense convolution matrix {rows}x{cols} exceeds the {MAX_DENSE_ENTRIES}-entry guard"
        ));
    }
    let r = (k / 2) as isize;
    let mut m = DenseMatrix::zeros(rows, cols);
    for o in 0..out_c {
        for i in 0..h {
            for j in 0..w {
                let row = (o * h + i) * w + j;
                for c in 0..in_c {
                    for p in 0..k {
                        for q in 0..k {
                            let si = i as isize + p as isize - r;
                            let sj = j as isize + q as isize - r;
                            if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                                continue;
                            }
                            let col = (c * h + si as usize) * w + sj as usize;
                            m.data[row * cols + col] += f.at(o, c, p, q);
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Flatten a single-sample tensor in the order used by the dense matrices.
pub fn vectorize(x: &Tensor4) -> Result<Vec<f64>> {
    if x.shape().b != 1 {
        return Err(shape_err!(
            "dense vectors hold one sample, got {}",
            x.shape()
        ));
    }
    Ok(x.data().to_vec())
}

pub fn unvectorize(v: Vec<f64>, c: usize, h: usize, w: usize) -> Result<Tensor4> {
    Tensor4::from_vec(Shape::new(1, c, h, w), v)
}
