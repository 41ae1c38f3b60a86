use std::collections::HashMap;
use std::sync::Arc;

use super::{dim_err, Real, Result, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor and its accumulated gradient.
///
/// The value sits behind an `Arc` so graphs can bind it without copying;
/// updates go through [`Parameter::value_mut`].
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    name: String,
    shape: Vec<usize>,
    value: Arc<Vec<T>>,
    grad: Vec<T>,
}

impl<T: Real> Parameter<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[0]
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn value(&self) -> &[T] {
        &self.value
    }

    pub(crate) fn shared_value(&self) -> Arc<Vec<T>> {
        Arc::clone(&self.value)
    }

    pub fn value_mut(&mut self) -> &mut [T] {
        Arc::make_mut(&mut self.value).as_mut_slice()
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        &mut self.grad
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::new(self.shape.clone(), self.value.to_vec()).expect("parameter shape")
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(TensorError::Contract(format!("duplicate parameter name {name}")));
        }
        if value.shape().is_empty() || value.shape().len() > 2 {
            return Err(dim_err("param", format!("{name}: parameters are 1-D or 2-D")));
        }
        let id = ParamId(self.params.len());
        let shape = value.shape().to_vec();
        let data = value.into_data();
        self.params.push(Parameter {
            name: name.clone(),
            grad: vec![T::zero(); data.len()],
            shape,
            value: Arc::new(data),
        });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Adds `scale * grad` into the parameter's gradient buffer.
    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[T], scale: T) {
        let p = &mut self.params[id.0];
        for (g, &d) in p.grad.iter_mut().zip(grad) {
            *g += scale * d;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}
