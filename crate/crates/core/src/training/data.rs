//! Degradation, tiling and augmentation of training images.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::error::{config_err, Result};
use crate::models::ModelKind;
use crate::tensor::{bicubic_resize, Dihedral, Tensor4};

/// One aligned training example.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    /// ILR patch for CRNet-A, LR patch for CRNet-B.
    pub input: Tensor4,
    /// HR patch.
    pub target: Tensor4,
    pub scale: usize,
}

/// Bicubic degradation of an HR image already cropped to a multiple of
/// `scale`: returns `(LR, ILR)`.
pub fn degrade(hr: &Tensor4, scale: usize) -> Result<(Tensor4, Tensor4)> {
    let lr = bicubic_resize(hr, 1.0 / scale as f64)?;
    let ilr = bicubic_resize(&lr, scale as f64)?;
    Ok((lr, ilr))
}

/// Tile offsets `0, stride, 2·stride, …` with `offset + patch ≤ len`.
pub fn tile_offsets(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    if len < patch {
        return Vec::new();
    }
    (0..=(len - patch) / stride).map(|k| k * stride).collect()
}

/// Cut every image into aligned pairs.
///
/// Each HR image is cropped to a multiple of `scale`, degraded with
/// [`degrade`] and tiled with `patch × patch` HR windows at `stride`. For
/// CRNet-A the input is the ILR window at the same place; for CRNet-B it is
/// the `patch/scale` LR window, which needs `patch` and `stride` divisible
/// by `scale`.
pub fn make_patch_pairs(
    images: &[Tensor4],
    scale: usize,
    patch: usize,
    stride: usize,
    kind: ModelKind,
) -> Result<Vec<PatchPair>> {
    if scale == 0 || patch == 0 || stride == 0 {
        return Err(config_err!("scale, patch and stride must be >= 1"));
    }
    if kind == ModelKind::CrnetB && (!patch.is_multiple_of(scale) || !stride.is_multiple_of(scale))
    {
        return Err(config_err!(
            "patch {patch} and stride {stride} must be multiples of scale {scale} for LR tiling"
        ));
    }
    let mut pairs = Vec::new();
    for hr in images {
        let hr = hr.modcrop(scale)?;
        let s = hr.shape();
        if s.h < patch || s.w < patch {
            return Err(config_err!(
                "image {}x{} is smaller than patch {patch}",
                s.h,
                s.w
            ));
        }
        let (lr, ilr) = degrade(&hr, scale)?;
        for &top in &tile_offsets(s.h, patch, stride) {
            for &left in &tile_offsets(s.w, patch, stride) {
                let target = hr.crop(top, left, patch, patch)?;
                let input = match kind {
                    ModelKind::CrnetA => ilr.crop(top, left, patch, patch)?,
                    ModelKind::CrnetB => {
                        let p = patch / scale;
                        lr.crop(top / scale, left / scale, p, p)?
                    }
                };
                pairs.push(PatchPair {
                    input,
                    target,
                    scale,
                });
            }
        }
    }
    Ok(pairs)
}

/// Apply `t` to both halves of the pair.
pub fn transform_pair(pair: &PatchPair, t: Dihedral) -> PatchPair {
    PatchPair {
        input: t.apply(&pair.input),
        target: t.apply(&pair.target),
        scale: pair.scale,
    }
}

/// Uniformly random horizontal flip and rotation by a multiple of 90°,
/// applied identically to input and target.
pub fn augment<R: Rng + ?Sized>(pair: &PatchPair, rng: &mut R) -> PatchPair {
    let t = Dihedral {
        flip: rng.random_bool(0.5),
        rot: rng.random_range(0..4),
    };
    transform_pair(pair, t)
}

/// Scale for the next CRNet-B batch, uniform over `scales`.
pub fn scale_augment_schedule<R: Rng + ?Sized>(scales: &[usize], rng: &mut R) -> Result<usize> {
    scales
        .choose(rng)
        .copied()
        .ok_or_else(|| config_err!("no scales configured"))
}

/// Stack pairs into one batch. All pairs must share shapes, and scale too
/// when `single_scale` (CRNet-B routes a batch through one scale's
/// modules; CRNet-A mixes scales freely). Returns the first pair's scale.
pub fn collate(pairs: &[&PatchPair], single_scale: bool) -> Result<(Tensor4, Tensor4, usize)> {
    let scale = pairs
        .first()
        .map(|p| p.scale)
        .ok_or_else(|| config_err!("empty batch"))?;
    if single_scale && pairs.iter().any(|p| p.scale != scale) {
        return Err(config_err!("batch mixes scales"));
    }
    let inputs: Vec<&Tensor4> = pairs.iter().map(|p| &p.input).collect();
    let targets: Vec<&Tensor4> = pairs.iter().map(|p| &p.target).collect();
    Ok((Tensor4::stack(&inputs)?, Tensor4::stack(&targets)?, scale))
}
