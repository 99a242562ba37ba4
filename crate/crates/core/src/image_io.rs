//! 8-bit image files (PNG, binary PGM/PPM) and raw tensor files.
//!
//! Images load as `1×c×h×w` tensors with values `v/255`, `c = 1` for
//! grayscale sources and `c = 3` otherwise; alpha is dropped. On save,
//! values are clamped to `[0, 1]` and rounded to the nearest level.
//!
//! Raw tensor layout (little-endian): magic `T4D\0`, `u32` version, four
//! `u64` dims (b, c, h, w), then `b·c·h·w` `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor4};

const TENSOR_MAGIC: &[u8; 4] = b"T4D\0";
const TENSOR_VERSION: u32 = 1;

fn img_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image(format!("{}: {e}", path.display()))
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(ImageFormat::Png),
        "pgm" | "ppm" | "pnm" => Ok(ImageFormat::Pnm),
        _ => Err(img_err(path, "unsupported extension (png, pgm, ppm)")),
    }
}

pub fn is_image_path(path: &Path) -> bool {
    format_for(path).is_ok()
}

pub fn load_image(path: &Path) -> Result<Tensor4> {
    let format = format_for(path)?;
    let bytes = fs::read(path)?;
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| img_err(path, e))?;
    Ok(from_dynamic(img))
}

fn from_dynamic(img: DynamicImage) -> Tensor4 {
    if img.color().has_color() {
        let rgb = img.to_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        Tensor4::from_fn(Shape::new(1, 3, h, w), |_, c, i, j| {
            f64::from(rgb.get_pixel(j as u32, i as u32)[c]) / 255.0
        })
    } else {
        let g = img.to_luma8();
        let (w, h) = (g.width() as usize, g.height() as usize);
        Tensor4::from_fn(Shape::new(1, 1, h, w), |_, _, i, j| {
            f64::from(g.get_pixel(j as u32, i as u32)[0]) / 255.0
        })
    }
}

#[inline]
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Save sample 0 of a 1- or 3-channel tensor.
pub fn save_image(path: &Path, x: &Tensor4) -> Result<()> {
    let format = format_for(path)?;
    let s = x.shape();
    if s.b != 1 {
        return Err(img_err(path, format!("expected a single image, got {s}")));
    }
    let (w, h) = (s.w as u32, s.h as u32);
    let img = match s.c {
        1 => DynamicImage::ImageLuma8(GrayImage::from_fn(w, h, |j, i| {
            image::Luma([to_u8(x.at(0, 0, i as usize, j as usize))])
        })),
        3 => DynamicImage::ImageRgb8(RgbImage::from_fn(w, h, |j, i| {
            let (i, j) = (i as usize, j as usize);
            image::Rgb([
                to_u8(x.at(0, 0, i, j)),
                to_u8(x.at(0, 1, i, j)),
                to_u8(x.at(0, 2, i, j)),
            ])
        })),
        c => return Err(img_err(path, format!("cannot save {c}-channel image"))),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    img.save_with_format(path, format)
        .map_err(|e| img_err(path, e))
}

/// Image files in `dir` (non-recursive), sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| img_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    paths.sort();
    Ok(paths)
}

pub fn write_tensor(path: &Path, x: &Tensor4) -> Result<()> {
    let mut buf = Vec::with_capacity(40 + 8 * x.len());
    buf.extend_from_slice(TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    for d in x.shape().dims() {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in x.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor4> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |m: &str| img_err(path, format!("not a tensor file: {m}"));
    if buf.len() < 40 || &buf[..4] != TENSOR_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    for (k, d) in dims.iter_mut().enumerate() {
        let off = 8 + 8 * k;
        *d = usize::try_from(u64::from_le_bytes(buf[off..off + 8].try_into().unwrap()))
            .map_err(|_| bad("dimension overflow"))?;
    }
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| bad("size overflow"))?;
    let body = &buf[40..];
    if body.len() != n * 8 {
        return Err(bad(&format!(
            "expected {} data bytes, found {}",
            n * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor4::from_vec(shape, data)
}
