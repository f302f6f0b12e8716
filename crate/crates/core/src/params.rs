use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn var(self, vars: &[Var]) -> Var {
        vars[self.0]
    }

    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, uniquely named trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        let current = &self.tensors[id.0];
        if current.shape() != tensor.shape() {
            return Err(Error::Config(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.names[id.0],
                current.shape(),
                tensor.shape()
            )));
        }
        self.tensors[id.0] = tensor.requires_grad(false);
        Ok(())
    }

    /// Replaces every tensor from a list in store order (used by gradient checks).
    pub fn with_tensors(&self, tensors: &[Tensor]) -> Result<Self> {
        let mut out = self.clone();
        if tensors.len() != self.len() {
            return Err(Error::Config(format!(
                "{} tensors for {} parameters",
                tensors.len(),
                self.len()
            )));
        }
        for (i, t) in tensors.iter().enumerate() {
            out.set(ParamId(i), t.clone())?;
        }
        Ok(out)
    }

    /// Records every parameter as a gradient-tracking leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }
}

/// Convolution along the clip axis, weight `[Cout, Cin, K]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Conv {
    /// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cout: usize,
        cin: usize,
        ksize: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / ((cin * ksize) as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[cout, cin, ksize], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]));
        Self { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        Ok(tape.conv1d(x, self.weight.var(vars), self.bias.var(vars))?)
    }
}

/// Fully connected layer over the channel axis, weight `[Dout, Din]`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dout: usize,
        din: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (din as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(&[dout, din], bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dout]));
        Self { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        Ok(tape.linear(x, self.weight.var(vars), self.bias.var(vars))?)
    }
}

/// Two dense layers with GeLU between, `D -> 4D -> D`.
#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub expand: Dense,
    pub project: Dense,
}

impl FeedForward {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            expand: Dense::init(store, &format!("{name}.0"), 4 * dim, dim, rng),
            project: Dense::init(store, &format!("{name}.1"), dim, 4 * dim, rng),
        }
    }

    pub fn apply(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        let h = self.expand.apply(tape, vars, x)?;
        let h = tape.gelu(h);
        self.project.apply(tape, vars, h)
    }
}
