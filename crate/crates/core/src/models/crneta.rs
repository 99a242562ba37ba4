//! Pre-upsampling network: feature extraction, CISTA block, reconstruction
//! and a global skip from the interpolated input.

use super::{cista_block, cista_block_with, CrnetAConfig, ModelNodes};
use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::error::{config_err, Result};
use crate::tensor::FilterBank;

pub(crate) const F0: &str = "F0";
pub(crate) const F1: &str = "F1";
pub(crate) const WL: &str = "Wl";
pub(crate) const S: &str = "S";
pub(crate) const WH: &str = "Wh";
pub(crate) const H: &str = "H";

/// Typed view of a CRNet-A parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct CrnetAParams {
    pub f0: FilterBank,
    pub f1: FilterBank,
    pub wl: FilterBank,
    /// Shared by every recursion.
    pub s: FilterBank,
    pub wh: FilterBank,
    pub h: FilterBank,
}

impl CrnetAParams {
    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let get = |n: &str| FilterBank::new(store.tensor(n)?.clone());
        Ok(CrnetAParams {
            f0: get(F0)?,
            f1: get(F1)?,
            wl: get(WL)?,
            s: get(S)?,
            wh: get(WH)?,
            h: get(H)?,
        })
    }

    pub fn into_store(self) -> ParamStore {
        let mut store = ParamStore::new();
        for (name, bank) in [
            (F0, self.f0),
            (F1, self.f1),
            (WL, self.wl),
            (S, self.s),
            (WH, self.wh),
            (H, self.h),
        ] {
            store.insert(name, bank.into_tensor());
        }
        store
    }
}

/// Feature extraction, `y = relu(F1 ⊛ relu(F0 ⊛ x))`.
pub(crate) fn features(g: &mut Graph, x: NodeId) -> NodeId {
    let f0 = g.parameter(F0);
    let f1 = g.parameter(F1);
    let a = g.conv2d(x, f0);
    let a = g.relu(a);
    let b = g.conv2d(a, f1);
    g.relu(b)
}

/// Reconstruction, `H ⊛ relu(Wh ⊛ z)`.
pub(crate) fn reconstruct(g: &mut Graph, z: NodeId) -> NodeId {
    let wh = g.parameter(WH);
    let h = g.parameter(H);
    let a = g.conv2d(z, wh);
    let a = g.relu(a);
    g.conv2d(a, h)
}

pub fn build_crneta(g: &mut Graph, cfg: &CrnetAConfig, x: NodeId) -> Result<ModelNodes> {
    let y = features(g, x);
    let wl = g.parameter(WL);
    let s = g.parameter(S);
    let z = cista_block(g, y, wl, s, cfg.k);
    Ok(finish(g, cfg, x, z))
}

/// CRNet-A with recursion `i` reading its own copy `S#i` instead of the
/// shared `S`; see [`unshare_recurrent_weights`].
pub fn build_crneta_unshared(g: &mut Graph, cfg: &CrnetAConfig, x: NodeId) -> Result<ModelNodes> {
    let y = features(g, x);
    let wl = g.parameter(WL);
    let steps: Vec<NodeId> = (0..cfg.k).map(|i| g.parameter(&unshared_name(i))).collect();
    let z = cista_block_with(g, y, wl, &steps);
    Ok(finish(g, cfg, x, z))
}

fn finish(g: &mut Graph, cfg: &CrnetAConfig, x: NodeId, z: NodeId) -> ModelNodes {
    let r = reconstruct(g, z);
    let output = if cfg.residual { g.add(x, r) } else { r };
    g.set_output(output);
    ModelNodes {
        input: x,
        output,
        code: z,
        residual: Some(r),
    }
}

pub(crate) fn unshared_name(i: usize) -> String {
    format!("{S}#{i}")
}

/// Copy of `store` where the shared `S` is replaced by `k` identical
/// copies `S#0 … S#(k-1)`, matching [`build_crneta_unshared`].
pub fn unshare_recurrent_weights(store: &ParamStore, k: usize) -> Result<ParamStore> {
    if k == 0 {
        return Err(config_err!("k must be >= 1"));
    }
    let s = store.tensor(S)?.clone();
    let mut out = ParamStore::new();
    for p in store.iter().filter(|p| p.name != S) {
        out.insert_param(p.clone());
    }
    for i in 0..k {
        out.insert(unshared_name(i), s.clone());
    }
    Ok(out)
}
