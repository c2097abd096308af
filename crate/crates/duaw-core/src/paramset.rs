//! Named tensor bag shared by every trainable model, with uniform
//! container IO and Adam state management.

use crate::adam::{adam_step, AdamState};
use crate::container::Container;
use crate::error::{DuawError, Result};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet {
    tensors: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self
            .tensors
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter '{}'", name))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Tensor)> {
        self.tensors.iter()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Serialized byte image; used for byte-identity assertions.
    pub fn digest_bytes(&self) -> Vec<u8> {
        let mut c = Container::new(b"DUAWTMP0");
        for (n, t) in &self.tensors {
            c.push(n.clone(), t.clone());
        }
        c.to_bytes()
    }

    pub fn write_into(&self, container: &mut Container) {
        for (n, t) in &self.tensors {
            container.push(n.clone(), t.clone());
        }
    }

    pub fn read_from(container: &Container, names: &[&str]) -> Result<Self> {
        let mut set = ParamSet::new();
        for name in names {
            set.push(*name, container.get(name)?.clone());
        }
        Ok(set)
    }
}

/// Tape handles for a ParamSet, in insertion order.
pub struct VarMap {
    vars: Vec<(String, Var)>,
}

impl VarMap {
    /// Record every tensor of `params` on the tape, as differentiable
    /// leaves when `trainable` and as constants otherwise.
    pub fn record(tape: &mut Tape, params: &ParamSet, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(n, t)| {
                let v = if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (n.clone(), v)
            })
            .collect();
        VarMap { vars }
    }

    pub fn get(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unknown parameter var '{}'", name))
            .1
    }

    pub fn iter(&self) -> impl Iterator<Item = &(String, Var)> {
        self.vars.iter()
    }
}

/// Per-parameter Adam optimizer over a ParamSet.
pub struct ParamOptimizer {
    states: Vec<AdamState>,
}

impl ParamOptimizer {
    pub fn new(params: &ParamSet) -> Self {
        ParamOptimizer {
            states: params.iter().map(|(_, t)| AdamState::new(t.shape())).collect(),
        }
    }

    /// Apply one Adam step to every parameter that received a gradient.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        vars: &VarMap,
        grads: &Gradients,
        lr: f32,
    ) -> Result<()> {
        for (i, (name, var)) in vars.iter().enumerate() {
            if let Some(g) = grads.wrt(*var) {
                let slot = params
                    .tensors
                    .iter_mut()
                    .find(|(n, _)| n == name)
                    .ok_or_else(|| DuawError::InvalidArg(format!("no parameter '{}'", name)))?;
                adam_step(&mut slot.1, g, &mut self.states[i], lr)?;
            }
        }
        Ok(())
    }
}
