//! Named learnable tensors and the flat registry that owns them.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Dims, RealTensor4};

/// Index of a parameter inside its [`ParameterRegistry`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    name: String,
    value: Arc<RealTensor4>,
    grad: RealTensor4,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: RealTensor4) -> Self {
        let grad = RealTensor4::zeros(value.dims());
        Parameter {
            name: name.into(),
            value: Arc::new(value),
            grad,
            trainable: true,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dims(&self) -> Dims {
        self.value.dims()
    }

    pub fn value(&self) -> &RealTensor4 {
        &self.value
    }

    /// Shared handle used when the value enters a tape.
    pub(crate) fn value_arc(&self) -> Arc<RealTensor4> {
        Arc::clone(&self.value)
    }

    /// Mutable access; copies the value first if a tape still holds it.
    pub fn value_mut(&mut self) -> &mut RealTensor4 {
        Arc::make_mut(&mut self.value)
    }

    pub fn set_value(&mut self, value: RealTensor4) -> Result<()> {
        if value.dims() != self.dims() {
            return Err(Error::Shape(format!(
                "parameter {}: new value {} does not match {}",
                self.name,
                value.dims(),
                self.dims()
            )));
        }
        self.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self) -> &RealTensor4 {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut RealTensor4 {
        &mut self.grad
    }

    /// Mutable value together with the accumulated gradient.
    pub fn value_and_grad(&mut self) -> (&mut RealTensor4, &RealTensor4) {
        (Arc::make_mut(&mut self.value), &self.grad)
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }
}

/// Parameters in construction order, addressable by name.
#[derive(Clone, Debug, Default)]
pub struct ParameterRegistry {
    params: Vec<Parameter>,
    by_name: HashMap<String, usize>,
}

impl ParameterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: RealTensor4) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
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

    /// Total scalar count over parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(Parameter::numel)
            .sum()
    }

    pub fn total(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_ordered() {
        let mut reg = ParameterRegistry::new();
        let a = reg.register("enc1.conv0.weight", RealTensor4::zeros([2, 1, 3, 3])).unwrap();
        let b = reg.register("enc1.conv0.bias", RealTensor4::zeros([1, 2, 1, 1])).unwrap();
        assert!(reg.register("enc1.conv0.bias", RealTensor4::zeros([1, 1, 1, 1])).is_err());
        assert_eq!(reg.id("enc1.conv0.bias"), Some(b));
        let names: Vec<_> = reg.iter().map(|p| p.name().to_string()).collect();
        assert_eq!(names, ["enc1.conv0.weight", "enc1.conv0.bias"]);
        assert_eq!(reg.get(a).grad().dims(), reg.get(a).dims());
        assert_eq!(reg.count_prefix("enc1."), 20);
    }

    #[test]
    fn value_mut_detaches_shared_handle() {
        let mut reg = ParameterRegistry::new();
        let a = reg.register("w", RealTensor4::full([1, 1, 1, 1], 1.0)).unwrap();
        let held = reg.get(a).value_arc();
        reg.get_mut(a).value_mut().data_mut()[0] = 2.0;
        assert_eq!(held.data()[0], 1.0);
        assert_eq!(reg.get(a).value().data()[0], 2.0);
    }
}
