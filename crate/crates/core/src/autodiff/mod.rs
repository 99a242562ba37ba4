//! Reverse-mode automatic differentiation over the tensor primitives.
//!
//! A [`Graph`] is a symbolic, append-only list of nodes; a node may only
//! reference nodes created before it, so creation order is a valid
//! evaluation order. [`Graph::forward`] binds inputs and parameters and
//! returns a [`Tape`] holding every intermediate value, from which
//! [`Tape::backward`] produces parameter gradients.
//!
//! Parameters are looked up by name and a graph holds one node per name, so
//! reusing a parameter (the shared `S` of an unrolled CISTA block, say)
//! simply makes several nodes read the same parameter node and its gradient
//! accumulates over all uses.

mod gradcheck;
mod params;

use std::collections::{BTreeMap, HashMap};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{
    conv2d_weight_grad, correlate, correlate_adjoint, pixel_shuffle, space_to_depth, Tensor4,
};

pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use params::{ParamStore, Parameter};

pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input(String),
    Parameter(String),
    /// Zero-padded cross-correlation of `input` with the weight node.
    Conv2d {
        input: NodeId,
        weight: NodeId,
    },
    /// Transpose of `Conv2d` with respect to its input, used as a forward op.
    Conv2dAdjoint {
        input: NodeId,
        weight: NodeId,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    ScalarMul(NodeId, f64),
    PixelShuffle(NodeId, usize),
    /// `½ · mean((a - b)²)`.
    MseLoss(NodeId, NodeId),
    /// `mean(|a - b|)`.
    MaeLoss(NodeId, NodeId),
}

impl Op {
    pub fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Input(_) | Op::Parameter(_) => vec![],
            Op::Conv2d { input, weight } | Op::Conv2dAdjoint { input, weight } => {
                vec![input, weight]
            }
            Op::Relu(a) | Op::ScalarMul(a, _) | Op::PixelShuffle(a, _) => vec![a],
            Op::Add(a, b) | Op::Sub(a, b) | Op::MseLoss(a, b) | Op::MaeLoss(a, b) => vec![a, b],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<String, NodeId>,
    inputs: HashMap<String, NodeId>,
    output: Option<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        let id = self.nodes.len();
        for inp in op.inputs() {
            assert!(inp < id, "node {inp} does not exist yet");
        }
        self.nodes.push(Node { id, op });
        id
    }

    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        let id = self.push(Op::Input(name.to_string()));
        self.inputs.insert(name.to_string(), id);
        id
    }

    /// The node for parameter `name`, created on first use.
    pub fn parameter(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.push(Op::Parameter(name.to_string()));
        self.params.insert(name.to_string(), id);
        id
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId) -> NodeId {
        self.push(Op::Conv2d { input, weight })
    }

    pub fn conv2d_adjoint(&mut self, input: NodeId, weight: NodeId) -> NodeId {
        self.push(Op::Conv2dAdjoint { input, weight })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }

    pub fn scalar_mul(&mut self, a: NodeId, s: f64) -> NodeId {
        self.push(Op::ScalarMul(a, s))
    }

    pub fn pixel_shuffle(&mut self, a: NodeId, r: usize) -> NodeId {
        self.push(Op::PixelShuffle(a, r))
    }

    pub fn mse_loss(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MseLoss(a, b))
    }

    pub fn mae_loss(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MaeLoss(a, b))
    }

    /// Mark the node whose value [`Graph::forward`] reports and from which
    /// [`Tape::backward`] differentiates. Defaults to the last node.
    pub fn set_output(&mut self, id: NodeId) {
        assert!(id < self.nodes.len(), "node {id} does not exist");
        self.output = Some(id);
    }

    pub fn output(&self) -> Option<NodeId> {
        self.output.or_else(|| self.nodes.len().checked_sub(1))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Names of all parameters the graph reads.
    pub fn parameter_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Parameter(name) => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Evaluate every node. Inputs are bound by name from `inputs`,
    /// parameters from `params`.
    pub fn forward<'g>(
        &'g self,
        params: &ParamStore,
        inputs: &[(&str, &Tensor4)],
    ) -> Result<Tape<'g>> {
        let root = self.root()?;
        let mut values: Vec<Tensor4> = Vec::with_capacity(self.nodes.len());
        let mut trainable = vec![false; self.nodes.len()];
        for node in &self.nodes {
            let value = match &node.op {
                Op::Input(name) => bind_input(name, inputs)?,
                Op::Parameter(name) => {
                    let p = bind_param(name, params)?;
                    trainable[node.id] = p.trainable;
                    p.tensor.clone()
                }
                op => eval_op(op, |id| &values[id])?,
            };
            values.push(value);
        }
        Ok(Tape {
            graph: self,
            values,
            trainable,
            root,
        })
    }

    /// Output value only. Intermediate values are dropped after their last
    /// use, so peak memory is a few activations rather than the whole tape.
    pub fn evaluate(&self, params: &ParamStore, inputs: &[(&str, &Tensor4)]) -> Result<Tensor4> {
        let root = self.root()?;
        let mut last_use: Vec<NodeId> = (0..self.nodes.len()).collect();
        for node in &self.nodes[..=root] {
            for i in node.op.inputs() {
                last_use[i] = node.id;
            }
        }
        let mut values: Vec<Option<Tensor4>> = vec![None; root + 1];
        for node in &self.nodes[..=root] {
            let value = match &node.op {
                Op::Input(name) => bind_input(name, inputs)?,
                Op::Parameter(name) => bind_param(name, params)?.tensor.clone(),
                op => eval_op(op, |id| {
                    values[id].as_ref().expect("value dropped before last use")
                })?,
            };
            for i in node.op.inputs() {
                if last_use[i] == node.id {
                    values[i] = None;
                }
            }
            values[node.id] = Some(value);
        }
        Ok(values[root].take().expect("root value present"))
    }

    fn root(&self) -> Result<NodeId> {
        self.output()
            .ok_or_else(|| Error::Usage("cannot evaluate an empty graph".into()))
    }
}

fn bind_input(name: &str, inputs: &[(&str, &Tensor4)]) -> Result<Tensor4> {
    inputs
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| (*t).clone())
        .ok_or_else(|| Error::Binding(name.to_string()))
}

fn bind_param<'p>(name: &str, params: &'p ParamStore) -> Result<&'p Parameter> {
    params
        .get(name)
        .ok_or_else(|| Error::Binding(format!("parameter '{name}'")))
}

/// Value of a non-leaf node given its operands.
fn eval_op<'v>(op: &Op, v: impl Fn(NodeId) -> &'v Tensor4) -> Result<Tensor4> {
    Ok(match *op {
        Op::Input(_) | Op::Parameter(_) => unreachable!("leaves are bound, not evaluated"),
        Op::Conv2d { input, weight } => correlate(v(input), v(weight))?,
        Op::Conv2dAdjoint { input, weight } => correlate_adjoint(v(input), v(weight))?,
        Op::Relu(a) => v(a).relu(),
        Op::Add(a, b) => v(a).add(v(b))?,
        Op::Sub(a, b) => v(a).sub(v(b))?,
        Op::ScalarMul(a, s) => v(a).scale(s),
        Op::PixelShuffle(a, r) => pixel_shuffle(v(a), r)?,
        Op::MseLoss(a, b) => {
            let (x, y) = (v(a), v(b));
            x.expect_same_shape(y)?;
            let sq: f64 = x
                .data()
                .iter()
                .zip(y.data())
                .map(|(p, q)| (p - q) * (p - q))
                .sum();
            Tensor4::scalar(0.5 * sq / x.len() as f64)
        }
        Op::MaeLoss(a, b) => {
            let (x, y) = (v(a), v(b));
            x.expect_same_shape(y)?;
            let abs: f64 = x
                .data()
                .iter()
                .zip(y.data())
                .map(|(p, q)| (p - q).abs())
                .sum();
            Tensor4::scalar(abs / x.len() as f64)
        }
    })
}

/// Values of every node after a forward pass.
#[derive(Debug)]
pub struct Tape<'g> {
    graph: &'g Graph,
    values: Vec<Tensor4>,
    trainable: Vec<bool>,
    root: NodeId,
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor4>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor4> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor4)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor4)> {
        self.grads.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// `sqrt(Σ‖g‖²)` over all parameters.
    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .map(Tensor4::norm_sq)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor4) {
        self.grads.insert(name.into(), grad);
    }
}

impl<'g> Tape<'g> {
    pub fn value(&self, id: NodeId) -> &Tensor4 {
        &self.values[id]
    }

    /// Value of the graph's output node.
    pub fn output(&self) -> &Tensor4 {
        &self.values[self.root]
    }

    /// Output value as a scalar; errors unless the output is `1×1×1×1`.
    pub fn scalar(&self) -> Result<f64> {
        let out = self.output();
        if out.len() != 1 {
            return Err(Error::Usage(format!(
                "expected a scalar output, got {}",
                out.shape()
            )));
        }
        Ok(out.data()[0])
    }

    /// Gradients of the (scalar) output for every trainable parameter.
    pub fn backward(&self) -> Result<Gradients> {
        let node_grads = self.backward_nodes()?;
        let mut grads = Gradients::default();
        for node in self.graph.nodes() {
            if let Op::Parameter(name) = &node.op {
                if !self.trainable[node.id] {
                    continue;
                }
                let g = node_grads[node.id]
                    .clone()
                    .unwrap_or_else(|| Tensor4::zeros(self.values[node.id].shape()));
                grads.insert(name.clone(), g);
            }
        }
        Ok(grads)
    }

    /// Gradient of the output with respect to every node; `None` where the
    /// node does not influence the output.
    pub fn backward_nodes(&self) -> Result<Vec<Option<Tensor4>>> {
        let root_value = self.output();
        if root_value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got {}",
                root_value.shape()
            )));
        }
        let n = self.values.len();
        let mut grads: Vec<Option<Tensor4>> = vec![None; n];
        grads[self.root] = Some(Tensor4::full(root_value.shape(), 1.0));

        for id in (0..=self.root).rev() {
            let Some(g) = grads[id].take() else { continue };
            let contributions = self.node_vjp(id, &g)?;
            grads[id] = Some(g);
            for (target, contrib) in contributions {
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(grads)
    }

    fn node_vjp(&self, id: NodeId, g: &Tensor4) -> Result<Vec<(NodeId, Tensor4)>> {
        let v = |i: NodeId| &self.values[i];
        let out = match self.graph.nodes[id].op {
            Op::Input(_) | Op::Parameter(_) => vec![],
            Op::Conv2d { input, weight } => {
                let k = v(weight).shape().h;
                vec![
                    (input, correlate_adjoint(g, v(weight))?),
                    (weight, conv2d_weight_grad(v(input), g, k)?),
                ]
            }
            Op::Conv2dAdjoint { input, weight } => {
                // <adjoint(x, w), g> = <x, conv(g, w)>
                let k = v(weight).shape().h;
                vec![
                    (input, correlate(g, v(weight))?),
                    (weight, conv2d_weight_grad(g, v(input), k)?),
                ]
            }
            Op::Relu(a) => {
                let gx = v(a).zip_map(g, |x, gv| if x > 0.0 { gv } else { 0.0 })?;
                vec![(a, gx)]
            }
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => vec![(a, g.clone()), (b, g.scale(-1.0))],
            Op::ScalarMul(a, s) => vec![(a, g.scale(s))],
            Op::PixelShuffle(a, r) => vec![(a, space_to_depth(g, r)?)],
            Op::MseLoss(a, b) => {
                let (x, y) = (v(a), v(b));
                let coef = g.data()[0] / x.len() as f64;
                let ga = x.zip_map(y, |p, q| coef * (p - q))?;
                let gb = ga.scale(-1.0);
                vec![(a, ga), (b, gb)]
            }
            Op::MaeLoss(a, b) => {
                let (x, y) = (v(a), v(b));
                let coef = g.data()[0] / x.len() as f64;
                let ga = x.zip_map(y, |p, q| {
                    let d = p - q;
                    if d > 0.0 {
                        coef
                    } else if d < 0.0 {
                        -coef
                    } else {
                        0.0
                    }
                })?;
                let gb = ga.scale(-1.0);
                vec![(a, ga), (b, gb)]
            }
        };
        for (target, t) in &out {
            if t.shape() != self.values[*target].shape() {
                return Err(shape_err!(
                    "gradient for node {target} has shape {} but its value is {}",
                    t.shape(),
                    self.values[*target].shape()
                ));
            }
        }
        Ok(out)
    }
}
