use alloc::string::String;
use alloc::vec::Vec;

use super::Tensor;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BufferId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable parameters plus non-trainable buffers (batch-norm
/// running statistics), in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    params: Vec<(String, Tensor<F>)>,
    buffers: Vec<(String, Tensor<F>)>,
}

/// Per-parameter gradients indexed by [`ParamId`].
pub type ParamGrads<F> = Vec<Option<Vec<F>>>;

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add_param(&mut self, name: impl Into<String>, value: Tensor<F>) -> ParamId {
        self.params.push((name.into(), value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<F>) -> BufferId {
        self.buffers.push((name.into(), value));
        BufferId(self.buffers.len() - 1)
    }

    pub fn param(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].1
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].1
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor<F> {
        &self.buffers[id.0].1
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor<F> {
        &mut self.buffers[id.0].1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.buffers.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn param_name(&self, id: ParamId) -> &str {
        &self.params[id.0].0
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Replaces the values of the parameter or buffer called `name`; the
    /// shape must match.
    pub fn set_by_name(&mut self, name: &str, data: &[F]) -> Result<()> {
        let slot = self
            .params
            .iter_mut()
            .chain(self.buffers.iter_mut())
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::MissingParameter(name.into()))?;
        if slot.1.numel() != data.len() {
            return Err(Error::Shape(alloc::format!(
                "`{name}` has {} values, got {}",
                slot.1.numel(),
                data.len()
            )));
        }
        slot.1.data_mut().copy_from_slice(data);
        Ok(())
    }

    pub fn zero_grads(&self) -> ParamGrads<F> {
        alloc::vec![None; self.params.len()]
    }
}
