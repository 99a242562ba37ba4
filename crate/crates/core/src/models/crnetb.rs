//! Post-upsampling multi-scale network.
//!
//! ```text
//! h  = head ⊛ x                                   shared, c → n0
//! p  = h + pre_b ⊛ relu(pre_a ⊛ relu(h))          one residual unit per scale
//! t  = p + H ⊛ relu(Wh ⊛ cista(relu(F1 ⊛ relu(F0 ⊛ p))))   shared trunk
//! u  = shuffle_r(up_r ⊛ t)                        ×4: two ×2 stages
//! out = tail ⊛ u                                  shared, c → c
//! ```

use super::crneta::{features, reconstruct, S, WL};
use super::{cista_block, CrnetBConfig, ModelNodes};
use crate::autodiff::{Graph, NodeId};
use crate::error::{config_err, Result};

pub(crate) const HEAD: &str = "head";
pub(crate) const TAIL: &str = "tail";

pub(crate) fn pre_names(r: usize) -> (String, String) {
    (format!("pre{r}_a"), format!("pre{r}_b"))
}

/// Upsampler banks for scale `r`, in application order.
pub fn upsampler_names(r: usize) -> Vec<String> {
    if r == 4 {
        vec!["up4_a".into(), "up4_b".into()]
    } else {
        vec![format!("up{r}")]
    }
}

pub fn build_crnetb(
    g: &mut Graph,
    cfg: &CrnetBConfig,
    x: NodeId,
    scale: usize,
) -> Result<ModelNodes> {
    if !cfg.scales.contains(&scale) {
        return Err(config_err!(
            "scale {scale} is not configured for this CRNet-B (scales {:?})",
            cfg.scales
        ));
    }
    let head = g.parameter(HEAD);
    let h = g.conv2d(x, head);

    let (pa, pb) = pre_names(scale);
    let pa = g.parameter(&pa);
    let pb = g.parameter(&pb);
    let a = g.relu(h);
    let a = g.conv2d(a, pa);
    let a = g.relu(a);
    let a = g.conv2d(a, pb);
    let p = g.add(h, a);

    let y = features(g, p);
    let wl = g.parameter(WL);
    let s = g.parameter(S);
    let z = cista_block(g, y, wl, s, cfg.k);
    let r = reconstruct(g, z);
    let t = g.add(p, r);

    let mut u = t;
    let stage = if scale == 4 { 2 } else { scale };
    for name in upsampler_names(scale) {
        let w = g.parameter(&name);
        let v = g.conv2d(u, w);
        u = g.pixel_shuffle(v, stage);
    }
    let tail = g.parameter(TAIL);
    let output = g.conv2d(u, tail);
    g.set_output(output);
    Ok(ModelNodes {
        input: x,
        output,
        code: z,
        residual: None,
    })
}
