//! Named, shaped parameter storage.

use crate::error::{Error, Result};
use indexmap::IndexMap;
use ndarray::{Array1, Array4, ArrayD, IxDyn};

/// One named array: f32 payload (the checkpoint dtype) plus shape and a
/// trainable flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Param {
            shape,
            data,
            trainable: true,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Param::new(shape, vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// View as a 4-D f64 array (conv weights).
    pub fn as_array4(&self) -> Array4<f64> {
        assert_eq!(self.shape.len(), 4, "expected 4-D shape, got {:?}", self.shape);
        Array4::from_shape_vec(
            (self.shape[0], self.shape[1], self.shape[2], self.shape[3]),
            self.data.iter().map(|&v| v as f64).collect(),
        )
        .unwrap()
    }

    /// View as a 1-D f64 array (biases).
    pub fn as_array1(&self) -> Array1<f64> {
        assert_eq!(self.shape.len(), 1, "expected 1-D shape, got {:?}", self.shape);
        Array1::from_vec(self.data.iter().map(|&v| v as f64).collect())
    }
}

/// Ordered map from dot-separated parameter paths to arrays. Insertion
/// order is the checkpoint payload order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    params: IndexMap<String, Param>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name, param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Param> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar parameter count.
    pub fn total_len(&self) -> usize {
        self.params.values().map(|p| p.len()).sum()
    }
}

/// Gradients keyed by parameter name, accumulated in f64.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: IndexMap<String, ArrayD<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add into the gradient for `name`, creating it if absent.
    pub fn accumulate(&mut self, name: &str, grad: ArrayD<f64>) {
        match self.grads.get_mut(name) {
            Some(existing) => *existing += &grad,
            None => {
                self.grads.insert(name.to_string(), grad);
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.grads.get(name)
    }

    /// Gradient for `name`, or zeros of the given shape if untouched.
    pub fn get_or_zeros(&self, name: &str, shape: &[usize]) -> ArrayD<f64> {
        match self.grads.get(name) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(shape)),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
