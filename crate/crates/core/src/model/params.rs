use std::collections::HashMap;

use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, TensorError, Var};

/// Which part of the network a parameter belongs to, used for modality gating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Group {
    Shared,
    TwoD,
    ThreeD,
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    groups: Vec<Group>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            groups: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, group: Group, value: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.groups.push(group);
        self.tensors.push(value);
    }

    /// Weight `[fan_in, fan_out]` drawn from U(-1/√fan_in, 1/√fan_in).
    pub fn add_matrix(&mut self, rng: &mut Rng, name: &str, group: Group, fan_in: usize, fan_out: usize) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = Tensor::from_fn([fan_in, fan_out], |_| rng.random_range(-bound..bound));
        self.insert(name, group, w);
    }

    /// Affine layer: `{name}.w` plus zero-initialized `{name}.b`.
    pub fn add_linear(&mut self, rng: &mut Rng, name: &str, group: Group, fan_in: usize, fan_out: usize) {
        self.add_matrix(rng, &format!("{name}.w"), group, fan_in, fan_out);
        self.insert(format!("{name}.b"), group, Tensor::zeros([fan_out]));
    }

    /// Layer-norm gain `{name}.g` (ones) and shift `{name}.b` (zeros).
    pub fn add_norm(&mut self, name: &str, group: Group, width: usize) {
        self.insert(format!("{name}.g"), group, Tensor::ones([width]));
        self.insert(format!("{name}.b"), group, Tensor::zeros([width]));
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn group(&self, i: usize) -> Group {
        self.groups[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.tensors[self.index[name]]
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces all values; shapes must match.
    pub fn set_tensors(&mut self, values: Vec<Tensor>) -> Result<(), TensorError> {
        if values.len() != self.tensors.len() {
            return Err(TensorError::Invalid {
                op: "set_tensors",
                msg: format!("expected {} tensors, got {}", self.tensors.len(), values.len()),
            });
        }
        for (i, v) in values.iter().enumerate() {
            if v.shape() != self.tensors[i].shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "set_tensors",
                    lhs: self.tensors[i].shape().to_vec(),
                    rhs: v.shape().to_vec(),
                });
            }
        }
        self.tensors = values;
        Ok(())
    }
}

/// Lazily registers parameters on a tape, once per forward pass.
#[derive(Debug)]
pub struct Binding<'a> {
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
}

impl<'a> Binding<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            vars: vec![None; store.len()],
        }
    }

    /// Registers every parameter up front; used when the caller wants a
    /// gradient slot for each parameter, touched or not.
    pub fn bind_all(&mut self, tape: &mut Tape) {
        for i in 0..self.vars.len() {
            self.var_at(tape, i);
        }
    }

    fn var_at(&mut self, tape: &mut Tape, i: usize) -> Var {
        *self.vars[i].get_or_insert_with(|| tape.param(self.store.tensors[i].clone()))
    }

    pub fn var(&mut self, tape: &mut Tape, name: &str) -> Var {
        let i = self
            .store
            .position(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        self.var_at(tape, i)
    }

    /// Whether the forward pass touched parameter `i`.
    pub fn used(&self, i: usize) -> bool {
        self.vars[i].is_some()
    }

    /// Gradients in store order, zero for parameters the pass never used.
    pub fn gradients(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(&self.store.tensors)
            .map(|(v, t)| {
                v.and_then(|v| tape.grad(v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
            })
            .collect()
    }

    /// Affine map over the last axis with `{name}.w` and `{name}.b`.
    pub fn linear(&mut self, tape: &mut Tape, name: &str, x: Var) -> Result<Var, TensorError> {
        let w = self.var(tape, &format!("{name}.w"));
        let b = self.var(tape, &format!("{name}.b"));
        let y = tape.matmul(x, w)?;
        tape.add(y, b)
    }

    /// Plain matrix product over the last axis with the weight `name`.
    pub fn project(&mut self, tape: &mut Tape, name: &str, x: Var) -> Result<Var, TensorError> {
        let w = self.var(tape, name);
        tape.matmul(x, w)
    }
}
