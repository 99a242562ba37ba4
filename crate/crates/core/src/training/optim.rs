//! Parameter updates.

use std::collections::BTreeMap;

use crate::autodiff::{Gradients, ParamStore};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor4;

use super::{OptimizerKind, TrainConfig};

/// Per-parameter accumulators. Buffers are created lazily with the shape
/// of the first gradient they see.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    /// SGD velocity, or Adam first moment.
    pub first: BTreeMap<String, Tensor4>,
    /// Adam second moment.
    pub second: BTreeMap<String, Tensor4>,
    /// Number of updates applied.
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind) -> Self {
        OptimizerState {
            kind,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            step: 0,
        }
    }

    /// Apply one update with learning rate `lr`.
    ///
    /// SGD: `v ← μ·v + lr·(g + wd·w)`, `w ← w − v`.
    /// Adam: bias-corrected moments, `w ← w − lr·m̂ / (√v̂ + ε)`.
    pub fn update(
        &mut self,
        params: &mut ParamStore,
        grads: &Gradients,
        lr: f64,
        cfg: &TrainConfig,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else {
                continue;
            };
            if !p.trainable {
                continue;
            }
            if g.shape() != p.tensor.shape() {
                return Err(shape_err!(
                    "gradient for '{name}' has shape {}, parameter has {}",
                    g.shape(),
                    p.tensor.shape()
                ));
            }
            let w = p.tensor.data_mut();
            let first = self
                .first
                .entry(name.to_string())
                .or_insert_with(|| Tensor4::zeros(g.shape()))
                .data_mut();
            match self.kind {
                OptimizerKind::Sgd => {
                    for ((wi, vi), &gi) in w.iter_mut().zip(first.iter_mut()).zip(g.data()) {
                        *vi = cfg.momentum * *vi + lr * (gi + cfg.weight_decay * *wi);
                        *wi -= *vi;
                    }
                }
                OptimizerKind::Adam => {
                    let second = self
                        .second
                        .entry(name.to_string())
                        .or_insert_with(|| Tensor4::zeros(g.shape()))
                        .data_mut();
                    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
                    let c1 = 1.0 - b1.powi(t);
                    let c2 = 1.0 - b2.powi(t);
                    for (((wi, mi), vi), &gi) in w
                        .iter_mut()
                        .zip(first.iter_mut())
                        .zip(second.iter_mut())
                        .zip(g.data())
                    {
                        let gi = gi + cfg.weight_decay * *wi;
                        *mi = b1 * *mi + (1.0 - b1) * gi;
                        *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                        *wi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.adam_eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Rescale `grads` so their global norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
