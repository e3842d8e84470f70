use std::collections::HashMap;

use rand::Rng;

use super::tensor::Tensor;
use super::NumericsError;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId, NumericsError> {
        if self.index.contains_key(name) {
            return Err(NumericsError::DuplicateParam(name.to_string()));
        }
        self.index.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut R,
    ) -> Result<ParamId, NumericsError> {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        self.add(name, Tensor::new(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Replaces every value with one of identical shape, keeping names.
    pub fn assign(&mut self, values: Vec<Tensor>) -> Result<(), NumericsError> {
        if values.len() != self.values.len() {
            return Err(NumericsError::Checkpoint(format!(
                "expected {} tensors, got {}",
                self.values.len(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if v.shape() != self.values[i].shape() {
                return Err(NumericsError::Checkpoint(format!(
                    "{}: expected shape {:?}, got {:?}",
                    self.names[i],
                    self.values[i].shape(),
                    v.shape()
                )));
            }
        }
        self.values = values;
        Ok(())
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }
}
