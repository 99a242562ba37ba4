//! The two super-resolution networks and the unrolled CISTA block they
//! share.
//!
//! Both models are expressed as [`Graph`]s over a named [`ParamStore`], so
//! training, gradient checking and inference all run through the same
//! code. Every convolution is zero-padded "same" correlation without bias.

mod config;
mod crneta;
mod crnetb;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamStore};
use crate::error::{config_err, shape_err, Result};
use crate::tensor::{bicubic_resize, Shape, Tensor4};

pub use config::{CrnetAConfig, CrnetBConfig, ModelConfig, ModelKind};
pub use crneta::{build_crneta, build_crneta_unshared, unshare_recurrent_weights, CrnetAParams};
pub use crnetb::{build_crnetb, upsampler_names};

/// Name of the single graph input of every model.
pub const INPUT: &str = "x";

/// `z₀ = relu(Wl ⊛ y)`, then `z ← relu(Wl ⊛ y + S ⊛ z)` `k` times with one
/// shared `S`. `Wl ⊛ y` is computed once.
pub fn cista_block(g: &mut Graph, y_feat: NodeId, wl: NodeId, s: NodeId, k: usize) -> NodeId {
    cista_block_with(g, y_feat, wl, &vec![s; k])
}

/// As [`cista_block`], with recursion `i` reading `s_steps[i]`.
pub fn cista_block_with(g: &mut Graph, y_feat: NodeId, wl: NodeId, s_steps: &[NodeId]) -> NodeId {
    let wy = g.conv2d(y_feat, wl);
    let mut z = g.relu(wy);
    for &s in s_steps {
        let sz = g.conv2d(z, s);
        let pre = g.add(wy, sz);
        z = g.relu(pre);
    }
    z
}

/// Nodes of a built model that callers look at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelNodes {
    pub input: NodeId,
    pub output: NodeId,
    /// CISTA block output `z_K`.
    pub code: NodeId,
    /// For CRNet-A, the residual `R` before the skip is added.
    pub residual: Option<NodeId>,
}

/// Graph of one model at one scale.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub graph: Graph,
    pub nodes: ModelNodes,
}

/// A configuration together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// He-style initialisation: every bank `out×in×k×k` is drawn from
/// `N(0, 2/(in·k²))`, in [`ModelConfig::param_shapes`] order from one
/// seeded stream.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in config.param_shapes() {
        let std = (2.0 / (shape.c * shape.h * shape.w) as f64).sqrt();
        store.insert(name, Tensor4::random_normal(shape, std, &mut rng));
    }
    Ok(store)
}

impl Model {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    /// Check that `params` holds exactly the tensors `config` expects.
    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        for (name, shape) in &expected {
            let t = params.tensor(name)?;
            if t.shape() != *shape {
                return Err(shape_err!(
                    "parameter '{name}' has shape {}, expected {shape}",
                    t.shape()
                ));
            }
        }
        if params.len() != expected.len() {
            let extra = params
                .names()
                .find(|n| !expected.iter().any(|(e, _)| e == n))
                .unwrap_or_default()
                .to_string();
            return Err(config_err!("unexpected parameter '{extra}'"));
        }
        Ok(Model { config, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Zero the final reconstruction filter so CRNet-A's residual is 0 and
    /// the model returns its input.
    pub fn zero_residual_head(&mut self) -> Result<()> {
        if self.kind() != ModelKind::CrnetA {
            return Err(config_err!("only CRNet-A has a residual head"));
        }
        let h = self.params.tensor_mut(crneta::H)?;
        *h = Tensor4::zeros(h.shape());
        Ok(())
    }

    /// Graph for scale `scale` (ignored by CRNet-A, whose input is already
    /// at the target resolution).
    pub fn graph(&self, scale: usize) -> Result<ModelGraph> {
        let mut graph = Graph::new();
        let x = graph.input(INPUT);
        let nodes = match &self.config {
            ModelConfig::A(cfg) => build_crneta(&mut graph, cfg, x)?,
            ModelConfig::B(cfg) => build_crnetb(&mut graph, cfg, x, scale)?,
        };
        Ok(ModelGraph { graph, nodes })
    }

    /// Run the network on its native input: the interpolated image for
    /// CRNet-A, the low-resolution image for CRNet-B.
    pub fn forward(&self, x: &Tensor4, scale: usize) -> Result<Tensor4> {
        self.check_input(x)?;
        let mg = self.graph(scale)?;
        mg.graph.evaluate(&self.params, &[(INPUT, x)])
    }

    /// Model input for a low-resolution image: its bicubic upsampling for
    /// CRNet-A, the image itself for CRNet-B.
    pub fn prepare_input(&self, lr: &Tensor4, scale: usize) -> Result<Tensor4> {
        match self.kind() {
            ModelKind::CrnetA => bicubic_resize(lr, scale as f64),
            ModelKind::CrnetB => Ok(lr.clone()),
        }
    }

    /// Low-resolution image in, `scale`× image out.
    pub fn super_resolve(&self, lr: &Tensor4, scale: usize) -> Result<Tensor4> {
        self.forward(&self.prepare_input(lr, scale)?, scale)
    }

    fn check_input(&self, x: &Tensor4) -> Result<()> {
        let c = self.config.channels();
        if x.shape().c != c {
            return Err(shape_err!(
                "model expects {c} input channels, got {}",
                x.shape()
            ));
        }
        Ok(())
    }
}

/// Shape of a `out×in×k×k` filter bank.
fn bank(out: usize, inp: usize, k: usize) -> Shape {
    Shape::new(out, inp, k, k)
}

#[cfg(test)]
mod tests;
