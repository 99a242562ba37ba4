//! Data preparation and the optimisation loop.
//!
//! Losses are normalised per element: L2 is `½·mean((out − target)²)`,
//! which for a batch of `N` patches of `P` pixels equals
//! `(1/2N)·Σ‖out − target‖² / P`; L1 is `mean(|out − target|)`.

mod data;
mod optim;
mod trainer;

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Gradients, NodeId};
use crate::error::{config_err, Error, Result};
use crate::kv::{join_list, KvMap};
use crate::models::{Model, ModelGraph, ModelKind, INPUT};
use crate::tensor::Tensor4;

pub use data::{
    augment, collate, degrade, make_patch_pairs, scale_augment_schedule, tile_offsets,
    transform_pair, PatchPair,
};
pub use optim::{clip_global_norm, OptimizerState};
pub use trainer::{train, write_trace_csv, BatchSource, EpochEnd, TraceRow, TrainReport};

/// Name of the target input in loss graphs.
pub const TARGET: &str = "target";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Loss {
    L2,
    L1,
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Loss::L2 => "l2",
            Loss::L1 => "l1",
        })
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "mse" => Ok(Loss::L2),
            "l1" | "mae" => Ok(Loss::L1),
            _ => Err(config_err!("unknown loss '{s}' (l2, l1)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// SGD with momentum.
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(config_err!("unknown optimizer '{s}' (sgd, adam)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss: Loss,
    pub optimizer: OptimizerKind,
    pub lr0: f64,
    /// Multiplier applied every `lr_period` epochs.
    pub lr_factor: f64,
    /// `None` keeps the rate constant.
    pub lr_period: Option<usize>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many updates even if epochs remain.
    pub max_steps: Option<usize>,
    /// Square patch side: the ILR/HR patch for CRNet-A, the LR patch for
    /// CRNet-B (whose HR patch is `patch·scale`). See [`TrainConfig::hr_window`].
    pub patch: usize,
    /// Tiling stride in the same units as `patch`.
    pub stride: usize,
    pub scales: Vec<usize>,
    pub augment: bool,
    /// Clip the global gradient norm to `clip / lr`.
    pub clip: Option<f64>,
    pub seed: u64,
    /// Write a checkpoint every this many epochs; 0 writes only the last.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Pre-upsampling recipe: L2, SGD from 0.1 divided by 10 every 10
    /// epochs for 35 epochs, 41-pixel patches, clipping on.
    pub fn recipe_a() -> Self {
        TrainConfig {
            loss: Loss::L2,
            optimizer: OptimizerKind::Sgd,
            lr0: 0.1,
            lr_factor: 0.1,
            lr_period: Some(10),
            momentum: 0.9,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 64,
            epochs: 35,
            max_steps: None,
            patch: 41,
            stride: 41,
            scales: vec![2, 3, 4],
            augment: true,
            clip: Some(0.4),
            seed: 0,
            checkpoint_every: 5,
        }
    }

    /// Post-upsampling recipe: L1, Adam from 1e-4 halved every 200 epochs
    /// for 800 epochs, 48-pixel LR patches, no clipping.
    pub fn recipe_b() -> Self {
        TrainConfig {
            loss: Loss::L1,
            optimizer: OptimizerKind::Adam,
            lr0: 1e-4,
            lr_factor: 0.5,
            lr_period: Some(200),
            batch_size: 16,
            epochs: 800,
            patch: 48,
            stride: 48,
            clip: None,
            checkpoint_every: 50,
            ..Self::recipe_a()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(config_err!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch size must be >= 1"));
        }
        if self.patch == 0 || self.stride == 0 {
            return Err(config_err!("patch and stride must be >= 1"));
        }
        if self.scales.is_empty() {
            return Err(config_err!("at least one scale is required"));
        }
        if self.lr_period == Some(0) {
            return Err(config_err!("lr_period must be >= 1"));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0) {
                return Err(config_err!("clip must be positive, got {c}"));
            }
        }
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "recipe",
        "loss",
        "optimizer",
        "lr0",
        "lr_factor",
        "lr_period",
        "momentum",
        "weight_decay",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "batch_size",
        "epochs",
        "max_steps",
        "patch",
        "stride",
        "scales",
        "augment",
        "clip",
        "seed",
        "checkpoint_every",
    ];

    /// Start from `recipe` (`a` or `b`, defaulting to the model's letter
    /// when `model` is present) and override any key that is set.
    /// `lr_period`, `max_steps` and `clip` accept `none`.
    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let recipe = match kv.get("recipe").or_else(|| kv.get("model")) {
            Some(r) if r.eq_ignore_ascii_case("b") || r.eq_ignore_ascii_case("crnet-b") => {
                Self::recipe_b()
            }
            Some(r) if r.eq_ignore_ascii_case("a") || r.eq_ignore_ascii_case("crnet-a") => {
                Self::recipe_a()
            }
            Some(r) => return Err(config_err!("unknown recipe '{r}' (a, b)")),
            None => Self::recipe_a(),
        };
        let opt = |key: &str, default: Option<f64>| -> Result<Option<f64>> {
            match kv.get(key) {
                Some(v) if v.eq_ignore_ascii_case("none") => Ok(None),
                Some(_) => kv.parse_opt(key),
                None => Ok(default),
            }
        };
        let opt_usize = |key: &str, default: Option<usize>| -> Result<Option<usize>> {
            match kv.get(key) {
                Some(v) if v.eq_ignore_ascii_case("none") => Ok(None),
                Some(_) => kv.parse_opt(key),
                None => Ok(default),
            }
        };
        let patch = kv.parse_or("patch", recipe.patch)?;
        let cfg = TrainConfig {
            loss: kv.parse_or("loss", recipe.loss)?,
            optimizer: kv.parse_or("optimizer", recipe.optimizer)?,
            lr0: kv.parse_or("lr0", recipe.lr0)?,
            lr_factor: kv.parse_or("lr_factor", recipe.lr_factor)?,
            lr_period: opt_usize("lr_period", recipe.lr_period)?,
            momentum: kv.parse_or("momentum", recipe.momentum)?,
            weight_decay: kv.parse_or("weight_decay", recipe.weight_decay)?,
            adam_beta1: kv.parse_or("adam_beta1", recipe.adam_beta1)?,
            adam_beta2: kv.parse_or("adam_beta2", recipe.adam_beta2)?,
            adam_eps: kv.parse_or("adam_eps", recipe.adam_eps)?,
            batch_size: kv.parse_or("batch_size", recipe.batch_size)?,
            epochs: kv.parse_or("epochs", recipe.epochs)?,
            max_steps: opt_usize("max_steps", recipe.max_steps)?,
            patch,
            stride: kv.parse_or("stride", patch)?,
            scales: kv.parse_list("scales")?.unwrap_or(recipe.scales),
            augment: kv.parse_or("augment", recipe.augment)?,
            clip: opt("clip", recipe.clip)?,
            seed: kv.parse_or("seed", recipe.seed)?,
            checkpoint_every: kv.parse_or("checkpoint_every", recipe.checkpoint_every)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// HR `(patch, stride)` for [`make_patch_pairs`] at `scale`.
    pub fn hr_window(&self, kind: ModelKind, scale: usize) -> (usize, usize) {
        match kind {
            ModelKind::CrnetA => (self.patch, self.stride),
            ModelKind::CrnetB => (self.patch * scale, self.stride * scale),
        }
    }

    pub fn write_kv(&self, kv: &mut KvMap) {
        let none = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        kv.set("loss", self.loss);
        kv.set("optimizer", self.optimizer);
        kv.set("lr0", self.lr0);
        kv.set("lr_factor", self.lr_factor);
        kv.set("lr_period", none(self.lr_period.map(|p| p.to_string())));
        kv.set("momentum", self.momentum);
        kv.set("weight_decay", self.weight_decay);
        kv.set("adam_beta1", self.adam_beta1);
        kv.set("adam_beta2", self.adam_beta2);
        kv.set("adam_eps", self.adam_eps);
        kv.set("batch_size", self.batch_size);
        kv.set("epochs", self.epochs);
        kv.set("max_steps", none(self.max_steps.map(|p| p.to_string())));
        kv.set("patch", self.patch);
        kv.set("stride", self.stride);
        kv.set("scales", join_list(&self.scales));
        kv.set("augment", self.augment);
        kv.set("clip", none(self.clip.map(|p| p.to_string())));
        kv.set("seed", self.seed);
        kv.set("checkpoint_every", self.checkpoint_every);
    }
}

/// `lr0 · factor^⌊epoch / period⌋`, constant without a period.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    match cfg.lr_period {
        Some(p) => cfg.lr0 * cfg.lr_factor.powi((epoch / p) as i32),
        None => cfg.lr0,
    }
}

/// A stacked batch for one scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub input: Tensor4,
    pub target: Tensor4,
    pub scale: usize,
}

impl Batch {
    pub fn from_pairs(pairs: &[&PatchPair], single_scale: bool) -> Result<Self> {
        let (input, target, scale) = collate(pairs, single_scale)?;
        Ok(Batch {
            input,
            target,
            scale,
        })
    }
}

/// Model graph at `scale` with `loss(output, target)` as its output.
pub fn loss_graph(model: &Model, scale: usize, loss: Loss) -> Result<(ModelGraph, NodeId)> {
    let mut mg = model.graph(scale)?;
    let t = mg.graph.input(TARGET);
    let l = match loss {
        Loss::L2 => mg.graph.mse_loss(mg.nodes.output, t),
        Loss::L1 => mg.graph.mae_loss(mg.nodes.output, t),
    };
    mg.graph.set_output(l);
    Ok((mg, l))
}

/// Loss and gradients for a batch, without updating anything.
pub fn loss_and_gradients(model: &Model, batch: &Batch, loss: Loss) -> Result<(f64, Gradients)> {
    let (mg, _) = loss_graph(model, batch.scale, loss)?;
    let tape = mg.graph.forward(
        &model.params,
        &[(INPUT, &batch.input), (TARGET, &batch.target)],
    )?;
    let value = tape.scalar()?;
    if !value.is_finite() {
        return Err(Error::Divergence(format!("loss is {value}")));
    }
    Ok((value, tape.backward()?))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    /// Loss before the update.
    pub loss: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Forward, backward, optional clipping to `clip / lr`, update.
pub fn train_step(
    model: &mut Model,
    batch: &Batch,
    opt: &mut OptimizerState,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<StepStats> {
    let (loss, mut grads) = loss_and_gradients(model, batch, cfg.loss)?;
    let mut clipped = false;
    let grad_norm = match cfg.clip {
        Some(theta) if lr > 0.0 => {
            let max = theta / lr;
            let n = clip_global_norm(&mut grads, max);
            clipped = n > max;
            n
        }
        _ => grads.global_norm(),
    };
    if !grad_norm.is_finite() {
        return Err(Error::Divergence(format!("gradient norm is {grad_norm}")));
    }
    opt.update(&mut model.params, &grads, lr, cfg)?;
    Ok(StepStats {
        loss,
        grad_norm,
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::models::{CrnetAConfig, CrnetBConfig};
    use crate::tensor::Shape;

    fn tiny_model(seed: u64) -> Model {
        Model::init(CrnetAConfig::tiny(2, 3, 2).into(), seed).unwrap()
    }

    fn batch(seed: u64) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = Tensor4::random_uniform(Shape::new(2, 1, 8, 8), 0.0, 1.0, &mut rng);
        let input = target
            .add(&Tensor4::random_normal(target.shape(), 0.05, &mut rng))
            .unwrap();
        Batch {
            input,
            target,
            scale: 2,
        }
    }

    #[test]
    fn lr_schedules() {
        let a = TrainConfig::recipe_a();
        assert_eq!(lr_schedule(0, &a), 0.1);
        assert!((lr_schedule(10, &a) - 0.01).abs() < 1e-15);
        assert!((lr_schedule(25, &a) - 0.001).abs() < 1e-15);
        let b = TrainConfig::recipe_b();
        assert_eq!(lr_schedule(0, &b), 1e-4);
        assert_eq!(lr_schedule(199, &b), 1e-4);
        assert_eq!(lr_schedule(200, &b), 5e-5);
        let constant = TrainConfig {
            lr_period: None,
            ..a
        };
        assert_eq!(lr_schedule(1_000_000, &constant), 0.1);
    }

    #[test]
    fn zero_lr_leaves_parameters_bit_identical() {
        for cfg in [TrainConfig::recipe_a(), TrainConfig::recipe_b()] {
            let mut m = tiny_model(1);
            let before = m.params.clone();
            let mut opt = OptimizerState::new(cfg.optimizer);
            let stats = train_step(&mut m, &batch(2), &mut opt, &cfg, 0.0).unwrap();
            assert!(stats.loss > 0.0);
            assert_eq!(m.params, before);
        }
    }

    #[test]
    fn reported_l2_loss_matches_independent_sum() {
        let m = tiny_model(3);
        let b = batch(4);
        let (loss, _) = loss_and_gradients(&m, &b, Loss::L2).unwrap();
        let out = m.forward(&b.input, 2).unwrap();
        let n = b.input.shape().b as f64;
        let pixels = (out.len() as f64) / n;
        let mut sum = 0.0;
        for i in 0..b.input.shape().b {
            let d = out.sample(i).sub(&b.target.sample(i)).unwrap();
            sum += d.data().iter().map(|v| v * v).sum::<f64>();
        }
        let expected = sum / (2.0 * n) / pixels;
        assert!((loss - expected).abs() <= 1e-12);
    }

    #[test]
    fn tiny_step_does_not_increase_loss() {
        let cfg = TrainConfig {
            momentum: 0.0,
            clip: None,
            ..TrainConfig::recipe_a()
        };
        for seed in 0..20 {
            let mut m = tiny_model(100 + seed);
            let b = batch(200 + seed);
            let mut opt = OptimizerState::new(OptimizerKind::Sgd);
            let before = train_step(&mut m, &b, &mut opt, &cfg, 1e-6).unwrap().loss;
            let (after, _) = loss_and_gradients(&m, &b, Loss::L2).unwrap();
            assert!(after <= before, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn clipping_bounds_the_update() {
        let cfg = TrainConfig {
            clip: Some(1e-6),
            momentum: 0.0,
            ..TrainConfig::recipe_a()
        };
        let mut m = tiny_model(5);
        let before = m.params.clone();
        let mut opt = OptimizerState::new(OptimizerKind::Sgd);
        let lr = 0.1;
        let stats = train_step(&mut m, &batch(6), &mut opt, &cfg, lr).unwrap();
        assert!(stats.clipped);
        // ‖Δw‖ = lr · clip/lr
        let mut step_sq = 0.0;
        for p in m.params.iter() {
            step_sq += p
                .tensor
                .sub(before.tensor(&p.name).unwrap())
                .unwrap()
                .norm_sq();
        }
        assert!((step_sq.sqrt() - 1e-6).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        let mut m = tiny_model(7);
        let mut b = batch(8);
        b.target.data_mut()[0] = f64::NAN;
        let cfg = TrainConfig::recipe_a();
        let mut opt = OptimizerState::new(cfg.optimizer);
        assert!(matches!(
            train_step(&mut m, &b, &mut opt, &cfg, 0.1),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn crnetb_batches_use_l1() {
        let cfg = TrainConfig::recipe_b();
        let mut m = Model::init(
            CrnetBConfig {
                c: 1,
                n0: 4,
                m0: 4,
                s: 3,
                k: 1,
                scales: vec![2],
            }
            .into(),
            9,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let b = Batch {
            input: Tensor4::random_uniform(Shape::new(2, 1, 4, 4), 0.0, 1.0, &mut rng),
            target: Tensor4::random_uniform(Shape::new(2, 1, 8, 8), 0.0, 1.0, &mut rng),
            scale: 2,
        };
        let out = m.forward(&b.input, 2).unwrap();
        let mae = out.sub(&b.target).unwrap().l1_norm() / out.len() as f64;
        let mut opt = OptimizerState::new(cfg.optimizer);
        let stats = train_step(&mut m, &b, &mut opt, &cfg, 1e-4).unwrap();
        assert!((stats.loss - mae).abs() < 1e-14);
    }

    #[test]
    fn config_from_kv() {
        let kv =
            KvMap::parse("model = crnet-b\nlr0 = 2e-4\nclip = 0.5\nmax_steps = 10\nscales = 2,4")
                .unwrap();
        let cfg = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!(cfg.optimizer, OptimizerKind::Adam);
        assert_eq!(cfg.lr0, 2e-4);
        assert_eq!(cfg.clip, Some(0.5));
        assert_eq!(cfg.max_steps, Some(10));
        assert_eq!(cfg.scales, vec![2, 4]);
        assert_eq!(cfg.stride, 48);
        assert_eq!(cfg.hr_window(ModelKind::CrnetB, 4), (192, 192));
        assert_eq!(cfg.hr_window(ModelKind::CrnetA, 4), (48, 48));

        let kv = KvMap::parse("recipe = a\nclip = none\nlr_period = none").unwrap();
        let cfg = TrainConfig::from_kv(&kv).unwrap();
        assert_eq!((cfg.clip, cfg.lr_period), (None, None));

        let mut kv = KvMap::new();
        cfg.write_kv(&mut kv);
        assert_eq!(TrainConfig::from_kv(&kv).unwrap(), cfg);

        assert!(TrainConfig::from_kv(&KvMap::parse("lr0 = 0").unwrap()).is_err());
        assert!(TrainConfig::from_kv(&KvMap::parse("batch_size = 0").unwrap()).is_err());
        assert!(TrainConfig::from_kv(&KvMap::parse("recipe = z").unwrap()).is_err());
    }
}
