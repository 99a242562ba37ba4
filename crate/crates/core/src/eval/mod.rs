//! Metrics, self-ensemble inference, checkpoints and directory-level
//! evaluation.
//!
//! Evaluation crops each HR image to a multiple of the scale, degrades it
//! with bicubic downsampling, super-resolves it and compares luminance after
//! shaving `scale` pixels from every border.

mod checkpoint;
mod metrics;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{config_err, shape_err, Result};
use crate::image_io::{list_images, load_image};
use crate::models::{Model, ModelKind};
use crate::tensor::{
    bicubic_resize, bicubic_resize_with, y_offset_to_rgb, BorderMode, Dihedral, Tensor4,
};

pub use checkpoint::{Checkpoint, Precision, FORMAT_VERSION};
pub use metrics::{
    luminance, psnr, psnr_y, psnr_y_with, ssim, ssim_y, ssim_y_with, SSIM_SIGMA, SSIM_WINDOW,
};

/// Mean of `f` over the 8 dihedral transforms of `x`, each output mapped
/// back by the inverse transform.
pub fn self_ensemble(x: &Tensor4, f: impl Fn(&Tensor4) -> Result<Tensor4>) -> Result<Tensor4> {
    let mut acc: Option<Tensor4> = None;
    for t in Dihedral::all() {
        let y = t.invert(&f(&t.apply(x))?);
        match &mut acc {
            Some(a) => a.add_assign(&y)?,
            None => acc = Some(y),
        }
    }
    Ok(acc.expect("eight transforms").scale(1.0 / 8.0))
}

fn run_model(model: &Model, x: &Tensor4, scale: usize, ensemble: bool) -> Result<Tensor4> {
    if ensemble {
        self_ensemble(x, |t| model.forward(t, scale))
    } else {
        model.forward(x, scale)
    }
}

/// Replace the luminance of `base` by `y` as an equal offset on every RGB
/// channel.
fn with_luminance(base: &Tensor4, y: &Tensor4) -> Result<Tensor4> {
    y_offset_to_rgb(base, &y.sub(&luminance(base)?)?)
}

/// Super-resolve a low-resolution image by `scale`.
///
/// A model with as many channels as the image runs directly. A 1-channel
/// model on an RGB image runs on luminance: bicubic upsampling supplies
/// colour and the model's luminance change is added back as an equal RGB
/// offset, so a zero residual reproduces the bicubic image exactly.
pub fn super_resolve_image(
    model: &Model,
    lr: &Tensor4,
    scale: usize,
    ensemble: bool,
) -> Result<Tensor4> {
    if !model.config.supports_scale(scale) {
        return Err(config_err!("model does not support scale {scale}"));
    }
    match model.kind() {
        ModelKind::CrnetA => {
            refine_interpolated(model, &bicubic_resize(lr, scale as f64)?, ensemble)
        }
        ModelKind::CrnetB => {
            let (mc, c) = (model.config.channels(), lr.shape().c);
            if mc == c {
                run_model(model, lr, scale, ensemble)
            } else if mc == 1 && c == 3 {
                let y = run_model(model, &luminance(lr)?, scale, ensemble)?;
                with_luminance(&bicubic_resize(lr, scale as f64)?, &y)
            } else {
                Err(shape_err!(
                    "a {mc}-channel model cannot process a {c}-channel image"
                ))
            }
        }
    }
}

/// Run CRNet-A on an image that is already interpolated to the target size,
/// with the same colour handling as [`super_resolve_image`].
pub fn refine_interpolated(model: &Model, ilr: &Tensor4, ensemble: bool) -> Result<Tensor4> {
    if model.kind() != ModelKind::CrnetA {
        return Err(config_err!("only CRNet-A takes interpolated input"));
    }
    let (mc, c) = (model.config.channels(), ilr.shape().c);
    if mc == c {
        run_model(model, ilr, 1, ensemble)
    } else if mc == 1 && c == 3 {
        let y = run_model(model, &luminance(ilr)?, 1, ensemble)?;
        with_luminance(ilr, &y)
    } else {
        Err(shape_err!(
            "a {mc}-channel model cannot process a {c}-channel image"
        ))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub scale: usize,
    pub shave: usize,
    pub quantized: bool,
    pub images: Vec<ImageMetrics>,
}

impl MetricsReport {
    /// Mean PSNR; `+∞` if any image matched exactly.
    pub fn mean_psnr(&self) -> f64 {
        self.images.iter().map(|m| m.psnr).sum::<f64>() / self.images.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.images.iter().map(|m| m.ssim).sum::<f64>() / self.images.len().max(1) as f64
    }

    pub fn to_table(&self) -> String {
        let fmt_psnr = |p: f64| {
            if p.is_infinite() {
                "inf".to_string()
            } else {
                format!("{p:.4}")
            }
        };
        let width = self
            .images
            .iter()
            .map(|m| m.name.len())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "scale x{}  shave {}  {}",
            self.scale,
            self.shave,
            if self.quantized { "8-bit" } else { "float" }
        );
        let _ = writeln!(s, "{:<width$}  {:>9}  {:>7}", "image", "PSNR(dB)", "SSIM");
        for m in &self.images {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9}  {:>7.4}",
                m.name,
                fmt_psnr(m.psnr),
                m.ssim
            );
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>9}  {:>7.4}",
            "mean",
            fmt_psnr(self.mean_psnr()),
            self.mean_ssim()
        );
        s
    }

    /// `image,psnr,ssim` rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr,ssim\n");
        for m in &self.images {
            let _ = writeln!(s, "{},{},{}", m.name, m.psnr, m.ssim);
        }
        let _ = writeln!(s, "mean,{},{}", self.mean_psnr(), self.mean_ssim());
        s
    }
}

/// How the SR image is produced from an HR file during evaluation.
pub enum SrSource<'a> {
    /// Bicubic upsampling of the bicubic-downsampled image.
    Bicubic(BorderMode),
    Model {
        model: &'a Model,
        ensemble: bool,
    },
    /// Precomputed SR images with the same file names as the HR images.
    Directory(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub scale: usize,
    /// Pixels removed per border; `None` uses `scale`.
    pub shave: Option<usize>,
    pub quantize: bool,
}

impl EvalOptions {
    pub fn new(scale: usize) -> Self {
        EvalOptions {
            scale,
            shave: None,
            quantize: false,
        }
    }
}

/// Evaluate every image in `hr_dir`. Images are processed in parallel and
/// reported in file-name order.
pub fn evaluate_directory(
    hr_dir: &Path,
    source: &SrSource<'_>,
    opts: EvalOptions,
) -> Result<MetricsReport> {
    let scale = opts.scale;
    if scale == 0 {
        return Err(config_err!("scale must be >= 1"));
    }
    let shave = opts.shave.unwrap_or(scale);
    let paths = list_images(hr_dir)?;
    if paths.is_empty() {
        return Err(config_err!("no images in {}", hr_dir.display()));
    }
    let images = paths
        .par_iter()
        .map(|path| {
            let name = path
                .file_name()
                .unwrap_or_default()
                .to_string_lossy()
                .into_owned();
            let hr = load_image(path)?.modcrop(scale)?;
            let sr = match source {
                SrSource::Bicubic(border) => {
                    let lr = bicubic_resize_with(&hr, 1.0 / scale as f64, *border)?;
                    bicubic_resize_with(&lr, scale as f64, *border)?
                }
                SrSource::Model { model, ensemble } => {
                    let lr = bicubic_resize(&hr, 1.0 / scale as f64)?;
                    super_resolve_image(model, &lr, scale, *ensemble)?
                }
                SrSource::Directory(dir) => {
                    let sr = load_image(&dir.join(&name))?;
                    if sr.shape() == hr.shape() {
                        sr
                    } else {
                        sr.modcrop(scale)?
                    }
                }
            };
            Ok(ImageMetrics {
                psnr: psnr_y_with(&sr, &hr, shave, opts.quantize)?,
                ssim: ssim_y_with(&sr, &hr, shave, opts.quantize)?,
                name,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport {
        scale,
        shave,
        quantized: opts.quantize,
        images,
    })
}
