use std::collections::HashMap;

use crate::error::{config_err, Result};
use crate::tensor::Tensor4;

/// A named tensor. A parameter referenced by several graph nodes receives
/// the sum of the gradients of all its uses.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor4,
    pub trainable: bool,
}

/// Insertion-ordered collection of parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace a trainable parameter.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor4) {
        self.insert_param(Parameter {
            name: name.into(),
            tensor,
            trainable: true,
        });
    }

    pub fn insert_param(&mut self, param: Parameter) {
        match self.index.get(&param.name) {
            Some(&i) => self.params[i] = param,
            None => {
                self.index.insert(param.name.clone(), self.params.len());
                self.params.push(param);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor4> {
        self.get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| config_err!("no parameter named '{name}'"))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor4> {
        self.get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| config_err!("no parameter named '{name}'"))
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| config_err!("no parameter named '{name}'"))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }
}
