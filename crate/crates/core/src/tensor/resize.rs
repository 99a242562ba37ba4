//! Separable bicubic resampling.
//!
//! Keys' cubic with `a = -0.5`. Output sample `u` (0-based) sits at input
//! coordinate `x = (u + 0.5) / scale - 0.5`. When shrinking, the kernel is
//! stretched by `1/scale` and its height scaled by `scale` (antialiasing),
//! so `4/scale` input taps contribute. Weights are normalised to sum to one
//! per output sample, and taps falling outside the image are folded back
//! according to [`BorderMode`].

use super::{Shape, Tensor4};
use crate::error::{config_err, Result};

/// How taps outside `[0, n)` are mapped back into the image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BorderMode {
    /// Clamp to the nearest edge sample.
    #[default]
    Replicate,
    /// Mirror with the edge sample repeated (`… 1 0 | 0 1 2 … n-1 | n-1 n-2 …`).
    Symmetric,
}

impl BorderMode {
    fn map(self, idx: isize, n: usize) -> usize {
        let n = n as isize;
        match self {
            BorderMode::Replicate => idx.clamp(0, n - 1) as usize,
            BorderMode::Symmetric => {
                let m = idx.rem_euclid(2 * n);
                (if m < n { m } else { 2 * n - 1 - m }) as usize
            }
        }
    }
}

impl std::str::FromStr for BorderMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replicate" => Ok(BorderMode::Replicate),
            "symmetric" => Ok(BorderMode::Symmetric),
            other => Err(config_err!(
                "unknown border mode '{other}' (replicate|symmetric)"
            )),
        }
    }
}

#[inline]
pub(crate) fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Per-output-sample taps `(input index, weight)` along one axis.
#[derive(Clone, Debug)]
pub struct ResampleWeights {
    pub taps: Vec<Vec<(usize, f64)>>,
}

impl ResampleWeights {
    pub fn out_len(&self) -> usize {
        self.taps.len()
    }
}

fn output_len(n: usize, scale: f64) -> Result<usize> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(config_err!(
            "scale must be positive and finite, got {scale}"
        ));
    }
    let out = (n as f64 * scale).round();
    if out < 1.0 {
        return Err(config_err!(
            "resizing length {n} by {scale} gives an empty output"
        ));
    }
    Ok(out as usize)
}

/// Taps for resampling an axis of length `n` by `scale`.
pub fn bicubic_weights(n: usize, scale: f64, border: BorderMode) -> Result<ResampleWeights> {
    let out_len = output_len(n, scale)?;
    let shrink = scale < 1.0;
    let kernel_width = if shrink { 4.0 / scale } else { 4.0 };
    let taps_per = kernel_width.ceil() as isize + 2;
    let mut taps = Vec::with_capacity(out_len);
    for u in 0..out_len {
        let x = (u as f64 + 0.5) / scale - 0.5;
        let left = (x - kernel_width / 2.0).floor() as isize;
        let mut row: Vec<(isize, f64)> = (0..taps_per)
            .map(|p| {
                let idx = left + p;
                let d = x - idx as f64;
                let wgt = if shrink {
                    scale * cubic(scale * d)
                } else {
                    cubic(d)
                };
                (idx, wgt)
            })
            .filter(|&(_, wgt)| wgt != 0.0)
            .collect();
        let total: f64 = row.iter().map(|&(_, wgt)| wgt).sum();
        for t in &mut row {
            t.1 /= total;
        }
        // Fold out-of-range taps back into the image, merging duplicates.
        let mut folded: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (idx, wgt) in row {
            let m = border.map(idx, n);
            match folded.iter_mut().find(|(i, _)| *i == m) {
                Some(entry) => entry.1 += wgt,
                None => folded.push((m, wgt)),
            }
        }
        taps.push(folded);
    }
    Ok(ResampleWeights { taps })
}

/// Bicubic resize by `scale` along both spatial axes, replicating edges.
pub fn bicubic_resize(x: &Tensor4, scale: f64) -> Result<Tensor4> {
    bicubic_resize_with(x, scale, BorderMode::Replicate)
}

pub fn bicubic_resize_with(x: &Tensor4, scale: f64, border: BorderMode) -> Result<Tensor4> {
    let s = x.shape();
    let rows = bicubic_weights(s.h, scale, border)?;
    let cols = bicubic_weights(s.w, scale, border)?;
    if scale == 1.0 {
        return Ok(x.clone());
    }
    let (oh, ow) = (rows.out_len(), cols.out_len());

    // Height first, then width.
    let mut tmp = Tensor4::zeros(Shape::new(s.b, s.c, oh, s.w));
    for n in 0..s.b {
        for c in 0..s.c {
            let src = x.plane(n, c);
            for (u, taps) in rows.taps.iter().enumerate() {
                for j in 0..s.w {
                    let v: f64 = taps.iter().map(|&(i, wgt)| wgt * src[i * s.w + j]).sum();
                    tmp.set(n, c, u, j, v);
                }
            }
        }
    }
    let mut out = Tensor4::zeros(Shape::new(s.b, s.c, oh, ow));
    for n in 0..s.b {
        for c in 0..s.c {
            let src = tmp.plane(n, c).to_vec();
            for i in 0..oh {
                let row = &src[i * s.w..(i + 1) * s.w];
                for (v, taps) in cols.taps.iter().enumerate() {
                    let val: f64 = taps.iter().map(|&(j, wgt)| wgt * row[j]).sum();
                    out.set(n, c, i, v, val);
                }
            }
        }
    }
    Ok(out)
}
