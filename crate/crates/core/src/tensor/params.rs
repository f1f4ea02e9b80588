use crate::error::{Error, Result};

use super::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    tensor: Tensor,
    frozen: bool,
}

/// Named trainable tensors, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Entry {
            name,
            tensor,
            frozen: false,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Frozen parameters still receive gradients but are skipped by
    /// [`sgd_step`].
    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.entries[id.0].frozen = frozen;
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.entries[id.0].frozen
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    /// Overwrites a parameter's values, keeping its shape.
    pub fn assign(&mut self, id: ParamId, tensor: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.tensor.shape() != tensor.shape() {
            return Err(Error::shape("assign", entry.tensor.shape(), tensor.shape()));
        }
        entry.tensor = tensor;
        Ok(())
    }
}

/// One gradient buffer per parameter, same shapes as the store.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn new(store: &ParamStore) -> Self {
        Gradients {
            grads: store.entries.iter().map(|e| vec![0.0; e.tensor.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &[f64]) {
        for (acc, g) in self.grads[id.0].iter_mut().zip(grad) {
            *acc += g;
        }
    }

    /// Global L2 norm over all buffers.
    pub fn norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn zero(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g *= factor;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    /// Maximum global L2 norm of the gradient.
    pub gradient_clip: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.01,
            gradient_clip: None,
        }
    }
}

impl SgdConfig {
    pub fn new(learning_rate: f64) -> Result<Self> {
        SgdConfig {
            learning_rate,
            gradient_clip: None,
        }
        .validated()
    }

    pub fn with_clip(mut self, max_norm: f64) -> Result<Self> {
        self.gradient_clip = Some(max_norm);
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(c) = self.gradient_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("gradient clip must be positive, got {c}")));
            }
        }
        Ok(self)
    }
}

/// `p <- p - lr * grad` for every unfrozen parameter, after optional global
/// norm clipping. Leaves `grads` zeroed. Returns the pre-clipping norm.
pub fn sgd_step(params: &mut ParamStore, grads: &mut Gradients, cfg: &SgdConfig) -> f64 {
    let norm = grads.norm();
    let mut step = cfg.learning_rate;
    if let Some(max_norm) = cfg.gradient_clip {
        if norm > max_norm {
            step *= max_norm / norm;
        }
    }
    for (entry, grad) in params.entries.iter_mut().zip(&grads.grads) {
        if entry.frozen {
            continue;
        }
        for (p, g) in entry.tensor.data_mut().iter_mut().zip(grad) {
            *p -= step * g;
        }
    }
    grads.zero();
    norm
}
