use rand::Rng;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.dims());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Owner of every parameter of a model. Layers refer to entries by [`ParamId`].
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Adds a parameter drawn from `U(-bound, bound)`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        dims: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
        let value = Tensor::new(dims.to_vec(), data).expect("dims match generated data");
        self.add(name, value)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds a batch of gradients (from [`crate::Tape::backward`]) into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, g) in grads.per_param.iter().enumerate() {
            if let Some(g) = g {
                self.params[i].grad.add_assign(g);
            }
        }
    }

    /// Replaces the value of a named parameter, checking dims.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| NnError::Format(format!("unknown parameter `{name}`")))?;
        let p = &mut self.params[id.0];
        if p.value.dims() != value.dims() {
            return Err(NnError::shape(
                name,
                format!("expected dims {:?}, got {:?}", p.value.dims(), value.dims()),
            ));
        }
        p.value = value;
        Ok(())
    }
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub(crate) per_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.per_param.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.per_param.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }
}
